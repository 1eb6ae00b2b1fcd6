#include "sparsedyn/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sparsedyn/errors.hpp"

namespace sparsedyn {

namespace fs = std::filesystem;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<size_t>(n));
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorCategory::io, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::io, "cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw Error(ErrorCategory::io, "write failed for " + path.string());
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    size_t b = cell.find_first_not_of(' ');
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& s, const fs::path& path, size_t row) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  if (!s.empty() && *b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return HUGE_VAL;
    if (s == "-inf") return -HUGE_VAL;
    throw Error(ErrorCategory::io, path.string() + ": row " + std::to_string(row) + ": not a number: '" + s + "'");
  }
  return v;
}

}  // namespace

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size())
      throw Error(ErrorCategory::io, path.string() + ": row " + std::to_string(t.rows.size() + 2) +
                                         " has " + std::to_string(cells.size()) + " cells, expected " +
                                         std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (first) throw Error(ErrorCategory::io, path.string() + ": empty file");
  return t;
}

void write_trajectory_csv(const fs::path& path, const Trajectory& traj) {
  std::ostringstream os;
  os << "t";
  for (int j = 0; j < traj.dim(); ++j) os << ",x" << j + 1;
  os << "\n";
  for (int k = 0; k < traj.samples(); ++k) {
    os << format_double(traj.time(k));
    for (int j = 0; j < traj.dim(); ++j) os << "," << format_double(traj.states(k, j));
    os << "\n";
  }
  write_text_file(path, os.str());
}

Trajectory read_trajectory_csv(const fs::path& path) {
  const CsvTable tab = read_csv(path);
  if (tab.header.size() < 2 || tab.header[0] != "t")
    throw Error(ErrorCategory::io, path.string() + ": expected header t,x1,...,xn");
  if (tab.rows.size() < 2) throw Error(ErrorCategory::size, path.string() + ": need at least two samples");
  const Eigen::Index m = static_cast<Eigen::Index>(tab.rows.size());
  const Eigen::Index n = static_cast<Eigen::Index>(tab.header.size()) - 1;
  Eigen::VectorXd t(m);
  Trajectory traj;
  traj.states.resize(m, n);
  for (Eigen::Index k = 0; k < m; ++k) {
    t(k) = parse_number(tab.rows[k][0], path, k + 2);
    for (Eigen::Index j = 0; j < n; ++j) traj.states(k, j) = parse_number(tab.rows[k][j + 1], path, k + 2);
  }
  traj.t0 = t(0);
  traj.dt = (t(m - 1) - t(0)) / static_cast<double>(m - 1);
  if (!(traj.dt > 0)) throw Error(ErrorCategory::io, path.string() + ": times must increase");
  for (Eigen::Index k = 0; k < m; ++k)
    if (std::abs(t(k) - (traj.t0 + k * traj.dt)) > 1e-6 * traj.dt)
      throw Error(ErrorCategory::io, path.string() + ": samples are not uniformly spaced near row " +
                                         std::to_string(k + 2));
  traj.kind = TrajectoryKind::noisy;
  return traj;
}

void write_derivatives_csv(const fs::path& path, const Eigen::VectorXd& t, const Eigen::MatrixXd& dx) {
  std::ostringstream os;
  os << "t";
  for (Eigen::Index j = 0; j < dx.cols(); ++j) os << ",dx" << j + 1;
  os << "\n";
  for (Eigen::Index k = 0; k < dx.rows(); ++k) {
    os << format_double(t(k));
    for (Eigen::Index j = 0; j < dx.cols(); ++j) os << "," << format_double(dx(k, j));
    os << "\n";
  }
  write_text_file(path, os.str());
}

void write_coefficients_csv(const fs::path& path, const BasisSpec& basis, const Eigen::VectorXd& xi) {
  if (xi.size() != basis.p()) throw Error(ErrorCategory::size, "coefficient length does not match the basis");
  std::ostringstream os;
  os << "basis_index,monomial,coefficient\n";
  for (int i = 0; i < basis.p(); ++i)
    os << i + 1 << "," << basis.monomial(i) << "," << format_double(xi(i)) << "\n";
  write_text_file(path, os.str());
}

Eigen::VectorXd read_coefficients_csv(const fs::path& path) {
  const CsvTable tab = read_csv(path);
  if (tab.header.size() != 3 || tab.header[0] != "basis_index" || tab.header[2] != "coefficient")
    throw Error(ErrorCategory::io, path.string() + ": expected header basis_index,monomial,coefficient");
  Eigen::VectorXd xi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tab.rows.size()));
  for (size_t r = 0; r < tab.rows.size(); ++r) {
    const double idx = parse_number(tab.rows[r][0], path, r + 2);
    if (idx < 1 || idx > static_cast<double>(tab.rows.size()) || idx != std::floor(idx))
      throw Error(ErrorCategory::io, path.string() + ": bad basis index on row " + std::to_string(r + 2));
    xi(static_cast<Eigen::Index>(idx) - 1) = parse_number(tab.rows[r][2], path, r + 2);
  }
  return xi;
}

void write_pareto_csv(const fs::path& path, const ParetoCurve& curve) {
  const ParetoCurve c = curve.normalized.size() == curve.points.size() ? curve : normalize_curve(curve);
  std::ostringstream os;
  os << "lambda,log_residual,log_l1,normalized_x,normalized_y,is_corner\n";
  for (size_t q = 0; q < c.points.size(); ++q) {
    const auto& pt = c.points[q];
    os << format_double(pt.lambda) << "," << format_double(pt.log_residual) << "," << format_double(pt.log_l1)
       << "," << format_double(c.normalized[q].x) << "," << format_double(c.normalized[q].y) << ","
       << (static_cast<int>(q) == c.corner_index ? 1 : 0) << "\n";
  }
  write_text_file(path, os.str());
}

void write_singular_values_csv(const fs::path& path, const Eigen::VectorXd& sv) {
  std::ostringstream os;
  os << "index,singular_value\n";
  for (Eigen::Index i = 0; i < sv.size(); ++i) os << i + 1 << "," << format_double(sv(i)) << "\n";
  write_text_file(path, os.str());
}

void write_dependency_csv(const fs::path& path, const Eigen::MatrixXd& D) {
  std::ostringstream os;
  os << "row";
  for (Eigen::Index c = 0; c < D.cols(); ++c) os << ",c" << c + 1;
  os << "\n";
  for (Eigen::Index r = 0; r < D.rows(); ++r) {
    os << r + 1;
    for (Eigen::Index c = 0; c < D.cols(); ++c) os << "," << format_double(D(r, c));
    os << "\n";
  }
  write_text_file(path, os.str());
}

void write_constraint_csv(const fs::path& path, const BasisSpec& basis, const ConstraintFunction& g) {
  if (g.eta.size() != basis.p()) throw Error(ErrorCategory::size, "constraint length does not match the basis");
  std::ostringstream os;
  os << "basis_index,monomial,eta\n";
  for (int i = 0; i < basis.p(); ++i) os << i + 1 << "," << basis.monomial(i) << "," << format_double(g.eta(i)) << "\n";
  write_text_file(path, os.str());
}

}  // namespace sparsedyn
