#pragma once

#include <string>
#include <vector>

namespace aprecond::csv {

/// Shortest-round-trip-safe formatting ("%.17g"); identical inputs give identical bytes.
std::string num(double v);

std::vector<std::string> split(const std::string& line, char sep = ',');

}  // namespace aprecond::csv
