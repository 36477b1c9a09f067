// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace emofuse::text {

/// Shortest-safe decimal form with 17 significant digits; parses back to the
/// identical double.
std::string formatDouble(double v);
std::optional<double> parseDouble(std::string_view s);
std::optional<long long> parseInt(std::string_view s);

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

/// Reads the whole file; throws IoError when it cannot be opened.
std::string readFile(const std::string &path);
/// Writes bytes exactly; throws IoError on failure.
void writeFile(const std::string &path, std::string_view bytes);

} // namespace emofuse::text
