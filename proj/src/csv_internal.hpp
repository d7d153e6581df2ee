#pragma once

// Shared CSV helpers for the module .cpp files; not installed.

#include <sstream>
#include <string>
#include <vector>

#include "svloc/error.hpp"

namespace svloc::detail {

inline std::vector<double> parse_numeric_line(const std::string& line,
                                              std::size_t expected_min,
                                              const std::string& path,
                                              std::size_t line_no) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(cell, &pos));
      if (pos != cell.size())
        throw IoError(path + ":" + std::to_string(line_no) + ": trailing characters in field");
    } catch (const IoError&) {
      throw;
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(line_no) + ": malformed numeric field '" + cell +
                    "'");
    }
  }
  if (out.size() < expected_min)
    throw IoError(path + ":" + std::to_string(line_no) + ": expected at least " +
                  std::to_string(expected_min) + " fields");
  return out;
}

}  // namespace svloc::detail
