#pragma once

#include <iosfwd>
#include <string>

#include "dataset.hpp"

namespace mvs {

// Wide CSV schema, one row per subject: an `id` column, an `s` column, zero
// or more `x_*` adjustment-covariate columns (cells must be non-empty), and
// one or more `y_*` outcome columns where an empty cell marks a missing
// outcome. Header names fix p and K and are preserved on write, so
// write_csv(read_csv(file)) round-trips datasets exactly (values are printed
// with 17 significant digits).
Dataset read_csv(const std::string& path);
Dataset read_csv_stream(std::istream& in, const std::string& origin);

void write_csv(const Dataset& ds, const std::string& path);
void write_csv_stream(const Dataset& ds, std::ostream& out);

}  // namespace mvs
