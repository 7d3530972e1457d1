#include "csv_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "errors.hpp"

namespace mvs {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  cells.push_back(cell);
  return cells;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

double parse_number(const std::string& cell, const std::string& where) {
  const std::string t = trim(cell);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size())
    fail_invalid("malformed number '" + cell + "' in " + where);
  return value;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Dataset read_csv_stream(std::istream& in, const std::string& origin) {
  std::string line;
  if (!std::getline(in, line)) fail_invalid(origin + ": empty file");
  const auto header = split_line(line);

  int id_col = -1, s_col = -1;
  std::vector<int> x_cols, y_cols;
  Dataset ds;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string name = trim(header[static_cast<std::size_t>(c)]);
    if (name == "id") {
      id_col = c;
    } else if (name == "s") {
      s_col = c;
    } else if (name.rfind("x_", 0) == 0) {
      x_cols.push_back(c);
      ds.covariate_names.push_back(name);
    } else if (name.rfind("y_", 0) == 0) {
      y_cols.push_back(c);
      ds.outcome_names.push_back(name);
    } else {
      fail_invalid(origin + ": unrecognized column '" + name +
                   "' (expected id, s, x_*, y_*)");
    }
  }
  if (id_col < 0) fail_invalid(origin + ": missing 'id' column");
  if (s_col < 0) fail_invalid(origin + ": missing 's' column");
  if (y_cols.empty()) fail_invalid(origin + ": no outcome (y_*) columns");
  ds.n_outcomes = static_cast<int>(y_cols.size());

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size())
      fail_invalid(origin + ":" + std::to_string(line_no) +
                   ": wrong number of cells");
    const std::string where = origin + ":" + std::to_string(line_no);
    Subject subj;
    subj.id = trim(cells[static_cast<std::size_t>(id_col)]);
    if (subj.id.empty()) fail_invalid(where + ": empty id");
    subj.s = parse_number(cells[static_cast<std::size_t>(s_col)], where);
    subj.x.resize(static_cast<Eigen::Index>(x_cols.size()));
    for (std::size_t j = 0; j < x_cols.size(); ++j) {
      const std::string& cell = cells[static_cast<std::size_t>(x_cols[j])];
      if (trim(cell).empty())
        fail_invalid(where + ": covariate cells must be non-empty");
      subj.x[static_cast<Eigen::Index>(j)] = parse_number(cell, where);
    }
    subj.y = Eigen::VectorXd::Zero(ds.n_outcomes);
    subj.y_obs.assign(static_cast<std::size_t>(ds.n_outcomes), 0);
    for (std::size_t j = 0; j < y_cols.size(); ++j) {
      const std::string cell = trim(cells[static_cast<std::size_t>(y_cols[j])]);
      if (cell.empty()) continue;  // missing outcome
      subj.y[static_cast<Eigen::Index>(j)] = parse_number(cell, where);
      subj.y_obs[j] = 1;
    }
    ds.subjects.push_back(std::move(subj));
  }
  return ds;
}

Dataset read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_io("cannot open '" + path + "' for reading");
  return read_csv_stream(in, path);
}

void write_csv_stream(const Dataset& ds, std::ostream& out) {
  Dataset named = ds;
  named.ensure_names();
  out << "id,s";
  for (const auto& name : named.covariate_names) out << ',' << name;
  for (const auto& name : named.outcome_names) out << ',' << name;
  out << '\n';
  for (const auto& subj : named.subjects) {
    out << subj.id << ',' << format_number(subj.s);
    for (Eigen::Index j = 0; j < subj.x.size(); ++j)
      out << ',' << format_number(subj.x[j]);
    for (int k = 0; k < named.n_outcomes; ++k) {
      out << ',';
      if (subj.y_obs[static_cast<std::size_t>(k)]) out << format_number(subj.y[k]);
    }
    out << '\n';
  }
}

void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail_io("cannot open '" + path + "' for writing");
  write_csv_stream(ds, out);
  if (!out) fail_io("failed writing '" + path + "'");
}

}  // namespace mvs
