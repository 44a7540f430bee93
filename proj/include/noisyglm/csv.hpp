#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "noisyglm/types.hpp"

namespace noisyglm::csv {

/// Parsed CSV: first line is the header, rows are observations.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const;
};

/// RFC 4180 style reader (quoted fields, embedded commas). Throws
/// DomainError on ragged rows.
Table read(std::istream& in);
Table read_file(const std::string& path);

/// Locale-independent shortest form that parses back to the same double.
std::string format(double v);

/// Strict parse of a whole field; throws DomainError naming `context`.
double parse(std::string_view field, std::string_view context = {});

/// Numeric block of the named columns, one row per record.
Matrix numeric_columns(const Table& t, const std::vector<std::size_t>& cols);

/// Writes one record with '\n' termination, quoting when needed.
void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace noisyglm::csv
