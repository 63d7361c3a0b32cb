#include "geia/errors.hpp"
