#pragma once

#include <iosfwd>
#include <string>

#include "tfnf/tfseries.hpp"

namespace tfnf {

/// Writes a field in the line-oriented text format
///
///   # comment lines start with '#'
///   field <m> <n> <order_cap> <truncated>
///   <h> <alpha_1> .. <alpha_m> <k_1> .. <k_n> <re> <im>
///
/// with 1-based component numbers `h`, coefficients rendered exactly
/// ("%.17g"), and rows in deterministic (component, index) order.
void write_field(std::ostream& os, const TFVectorField& x);

/// Parses the format produced by write_field.  Throws Err::parse with a
/// line number on malformed input.
TFVectorField read_field(std::istream& is);

void save_field(const std::string& path, const TFVectorField& x);
TFVectorField load_field(const std::string& path);

}  // namespace tfnf
