#pragma once

#include <istream>
#include <string>
#include <vector>

namespace effnet::detail {

// Reads one RFC 4180 record (quoted fields may span lines). Returns false at
// end of input. Throws FormatError naming `source` on an unterminated quote.
bool read_csv_row(std::istream& in, std::vector<std::string>& fields, const std::string& source);

// Quotes a field when it contains a comma, quote or line break.
std::string csv_escape(const std::string& field);

} // namespace effnet::detail
