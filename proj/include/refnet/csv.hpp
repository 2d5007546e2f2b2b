#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace refnet::csv {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Quotes a field when it holds a comma, quote, CR or LF; inner quotes are doubled.
std::string escape(std::string_view field);

/// RFC 4180 writer: comma separated, CRLF line endings.
class Writer {
   public:
    explicit Writer(std::ostream& out) : out_(out) {}
    void row(const std::vector<std::string>& fields);

   private:
    std::ostream& out_;
};

}  // namespace refnet::csv
