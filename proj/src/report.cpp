#include "geia/report.hpp"

#include <fstream>
#include <optional>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "geia/errors.hpp"

namespace geia {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json load(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ReportError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ReportError(p.string() + ": " + e.what());
  }
}

std::string pct(const json& v) {
  return v.is_number() ? fmt::format("{:.2f}", 100.0 * v.get<double>()) : "-";
}
std::string num(const json& v, int prec = 2) {
  return v.is_number() ? fmt::format("{:.{}f}", v.get<double>(), prec) : (v.is_string() ? v.get<std::string>() : "-");
}
std::string pval(const json& v) {
  if (v.is_number()) return fmt::format("{:.3g}", v.get<double>());
  return v.is_string() ? v.get<std::string>() : "-";
}
std::string raw(const json& v) { return v.is_null() ? "" : v.dump(); }

// Left-aligned text table with a header rule.
std::string table(const std::string& title, const std::vector<std::string>& header,
                  const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    w[c] = header[c].size();
    for (const auto& r : rows) w[c] = std::max(w[c], r[c].size());
  }
  std::ostringstream out;
  out << title << '\n';
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      out << (c ? "  " : "") << cells[c] << std::string(w[c] - cells[c].size(), ' ');
    }
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto x : w) total += x;
  out << std::string(total + 2 * (w.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r);
  return out.str();
}

std::string csv_line(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    const std::string& c = cells[i];
    if (c.find_first_of(",\"\n") != std::string::npos) {
      s += '"';
      for (char ch : c) s += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      s += '"';
    } else {
      s += c;
    }
  }
  return s + '\n';
}

}  // namespace

RenderedReport render_report(const std::vector<fs::path>& run_dirs) {
  RenderedReport out;
  if (run_dirs.empty()) {
    out.text = "no runs\n";
    return out;
  }

  std::vector<std::vector<std::string>> recon, gen, grid, attack_csv, audit_csv;
  std::optional<int> version;
  for (const auto& dir : run_dirs) {
    if (fs::exists(dir / "PARTIAL")) throw ReportError(dir.string() + " is an incomplete run");
    const bool is_attack = fs::exists(dir / "metrics.json");
    const bool is_audit = fs::exists(dir / "audit.json");
    if (!is_attack && !is_audit) throw ReportError(dir.string() + " holds no results");
    const json j = load(dir / (is_attack ? "metrics.json" : "audit.json"));
    const int v = j.value("version", 0);
    if (version && *version != v)
      throw ReportError("runs mix result versions " + std::to_string(*version) + " and " + std::to_string(v));
    version = v;

    if (is_attack) {
      const json& m = j.at("metrics");
      const std::string attack = j.at("attack"), victim = j.at("victim_id"), ds = j.at("dataset");
      recon.push_back({attack, victim, ds, pct(m["precision"]), pct(m["recall"]), pct(m["f1"]),
                       num(m["swr"]), num(m["swr_diff_vs_test"]), pct(m["nerr"])});
      gen.push_back({attack, victim, ds, pct(m["es"]), num(m["ppl"]), pct(m["rouge1"]), pct(m["rougeL"]),
                     pct(m["bleu1"]), pct(m["bleu2"]), pct(m["bleu4"]), m.value("scorer_id", "")});
      attack_csv.push_back({dir.string(), attack, victim, ds, raw(m["precision"]), raw(m["recall"]),
                            raw(m["f1"]), raw(m["swr"]), raw(m["swr_diff_vs_test"]), raw(m["nerr"]),
                            raw(m["es"]), raw(m["ppl"]), raw(m["rouge1"]), raw(m["rougeL"]),
                            raw(m["bleu1"]), raw(m["bleu2"]), raw(m["bleu4"]), m.value("scorer_id", "")});
    } else {
      for (const auto& row : j.at("rows")) {
        for (const char* agg : {"whole_sentence", "masked_only"}) {
          const json& c = row.at(agg);
          const std::string rid = row.at("reasoner_id"), vid = row.at("victim_id");
          grid.push_back({rid, vid, agg, num(c["orig_with"]), num(c["sim_with"]), num(c["pd_with"]),
                          pval(c["p_with"]), num(c["orig_without"]), num(c["sim_without"]),
                          num(c["pd_without"]), pval(c["p_without"]), num(c["n_with"], 0)});
          audit_csv.push_back({dir.string(), rid, vid, agg, raw(c["orig_with"]), raw(c["orig_without"]),
                               raw(c["sim_with"]), raw(c["sim_without"]), raw(c["pd_with"]),
                               raw(c["pd_without"]), raw(c["t_with"]), raw(c["p_with"]),
                               raw(c["t_without"]), raw(c["p_without"]), raw(c["n_with"]),
                               raw(c["n_without"])});
        }
      }
    }
  }

  std::ostringstream text, csv;
  if (!recon.empty()) {
    text << table("Reconstruction (%, SWR in percentage points)",
                  {"Attack", "Victim", "Dataset", "P", "R", "F1", "SWR", "dSWR", "NERR"}, recon)
         << '\n'
         << table("Generation quality (%)",
                  {"Attack", "Victim", "Dataset", "ES", "PPL", "ROUGE-1", "ROUGE-L", "BLEU-1", "BLEU-2",
                   "BLEU-4", "Scorer"},
                  gen);
    csv << csv_line({"run", "attack", "victim_id", "dataset", "precision", "recall", "f1", "swr",
                     "swr_diff_vs_test", "nerr", "es", "ppl", "rouge1", "rougeL", "bleu1", "bleu2",
                     "bleu4", "scorer_id"});
    for (const auto& r : attack_csv) csv << csv_line(r);
  }
  if (!grid.empty()) {
    if (!recon.empty()) {
      text << '\n';
      csv << '\n';
    }
    text << table("Attacker log-likelihood: original vs alternative",
                  {"Reasoner", "Victim", "Tokens", "L orig w/", "L sim w/", "%diff w/", "p w/",
                   "L orig w/o", "L sim w/o", "%diff w/o", "p w/o", "n"},
                  grid);
    csv << csv_line({"run", "reasoner_id", "victim_id", "aggregation", "orig_with", "orig_without",
                     "sim_with", "sim_without", "pd_with", "pd_without", "t_with", "p_with", "t_without",
                     "p_without", "n_with", "n_without"});
    for (const auto& r : audit_csv) csv << csv_line(r);
  }
  out.text = text.str();
  out.csv = csv.str();
  return out;
}

}  // namespace geia
