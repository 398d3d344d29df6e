#pragma once

// Matrix files.
//
// CSV: one component per line, one realization per column. Lines starting
// with '#' are comments; a first non-comment line with any non-numeric field
// is taken as a header and skipped.
//
// KLCM binary: 16-byte header {"KLCM", u32 rows, u32 cols, u32 reserved = 0}
// followed by rows*cols little-endian float64 values in column-major order
// (realizations contiguous).
//
// KLCS container: 16-byte header {"KLCS", u32 version = 1, u32 sections,
// u32 reserved = 0}; each section is {u32 name length, name bytes, KLCM block}.

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "klpost/error.hpp"
#include "klpost/prior.hpp"
#include "klpost/reduction.hpp"

namespace klpost {

namespace detail {

inline bool parse_double(std::string_view text, double& out) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(',', pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b.data(), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw io_error("truncated binary file");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

inline void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (int k = 0; k < 8; ++k) b[static_cast<std::size_t>(k)] = static_cast<char>((bits >> (8 * k)) & 0xFF);
  os.write(b.data(), 8);
}

inline double get_f64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw io_error("truncated binary file");
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= std::uint64_t{b[static_cast<std::size_t>(k)]} << (8 * k);
  return std::bit_cast<double>(bits);
}

inline void write_klcm_block(std::ostream& os, const MatrixXd& m) {
  os.write("KLCM", 4);
  put_u32(os, static_cast<std::uint32_t>(m.rows()));
  put_u32(os, static_cast<std::uint32_t>(m.cols()));
  put_u32(os, 0);
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) put_f64(os, m(i, j));
}

inline MatrixXd read_klcm_block(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || std::memcmp(magic.data(), "KLCM", 4) != 0)
    throw io_error("bad KLCM magic");
  const std::uint32_t rows = get_u32(is);
  const std::uint32_t cols = get_u32(is);
  get_u32(is);
  MatrixXd m(rows, cols);
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = get_f64(is);
  return m;
}

}  // namespace detail

/// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

inline MatrixXd parse_matrix_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    if (view.find_first_not_of(" \t") == std::string_view::npos) continue;
    if (view.front() == '#') continue;
    std::vector<double> values;
    bool numeric = true;
    for (std::string_view field : detail::split_commas(view)) {
      double v = 0.0;
      if (!detail::parse_double(field, v)) {
        numeric = false;
        break;
      }
      values.push_back(v);
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw io_error("CSV line " + std::to_string(line_no) + ": non-numeric field");
    }
    first = false;
    if (!rows.empty() && values.size() != rows.front().size())
      throw io_error("CSV line " + std::to_string(line_no) + ": ragged row");
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw io_error("CSV holds no data");
  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

inline void write_matrix_csv(std::ostream& os, const MatrixXd& m,
                             const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

inline bool is_binary_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".bin" || ext == ".klcm";
}

inline MatrixXd read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  const bool binary = in.gcount() == 4 && std::memcmp(magic.data(), "KLCM", 4) == 0;
  in.clear();
  in.seekg(0);
  if (binary) return detail::read_klcm_block(in);
  return parse_matrix_csv(in);
}

/// Writes CSV or KLCM depending on the extension (.bin / .klcm are binary).
inline void write_matrix(const std::filesystem::path& path, const MatrixXd& m,
                         const std::vector<std::string>& comments = {}) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + path.string());
  if (is_binary_path(path))
    detail::write_klcm_block(out, m);
  else
    write_matrix_csv(out, m, comments);
  if (!out) throw io_error("write failed for " + path.string());
}

using Section = std::pair<std::string, MatrixXd>;

inline void write_container(const std::filesystem::path& path, const std::vector<Section>& sections) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + path.string());
  out.write("KLCS", 4);
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(sections.size()));
  detail::put_u32(out, 0);
  for (const auto& [name, m] : sections) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_klcm_block(out, m);
  }
  if (!out) throw io_error("write failed for " + path.string());
}

inline std::vector<Section> read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || std::memcmp(magic.data(), "KLCS", 4) != 0)
    throw io_error("bad KLCS magic in " + path.string());
  if (detail::get_u32(in) != 1) throw io_error("unsupported KLCS version");
  const std::uint32_t count = detail::get_u32(in);
  detail::get_u32(in);
  std::vector<Section> sections;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = detail::get_u32(in);
    if (len > 4096) throw io_error("section name too long");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw io_error("truncated section name");
    sections.emplace_back(std::move(name), detail::read_klcm_block(in));
  }
  return sections;
}

inline const MatrixXd& find_section(const std::vector<Section>& sections, std::string_view name) {
  for (const auto& s : sections)
    if (s.first == name) return s.second;
  throw io_error("missing section '" + std::string(name) + "'");
}

/// Everything needed to map reduced samples back and to re-evaluate the prior.
struct FittedModel {
  ReducedBasis basis;
  ScalingParams scaling;
  PriorKde prior;
};

inline void save_model(const std::filesystem::path& path, const FittedModel& model) {
  const ReducedBasis& b = model.basis;
  auto scalar = [](double v) { return MatrixXd::Constant(1, 1, v); };
  auto range = [](IndexRange r) {
    MatrixXd m(1, 2);
    m << static_cast<double>(r.start), static_cast<double>(r.size);
    return m;
  };
  write_container(path, {{"basis.x_bar", b.x_bar},
                         {"basis.phi", b.phi},
                         {"basis.kappa", b.kappa},
                         {"basis.kappa_all", b.kappa_all},
                         {"basis.q_rows", range(b.q_rows)},
                         {"basis.w_rows", range(b.w_rows)},
                         {"basis.eps_pca", scalar(b.eps_pca)},
                         {"basis.trace_cov", scalar(b.trace_cov)},
                         {"scaling.shift", model.scaling.shift},
                         {"scaling.scale", model.scaling.scale},
                         {"prior.centers", model.prior.centers}});
}

inline FittedModel load_model(const std::filesystem::path& path) {
  const auto sections = read_container(path);
  auto range = [&](std::string_view name) {
    const MatrixXd& m = find_section(sections, name);
    if (m.size() != 2) throw io_error("bad index range section");
    return IndexRange{static_cast<Index>(m(0)), static_cast<Index>(m(1))};
  };
  FittedModel model;
  ReducedBasis& b = model.basis;
  b.x_bar = find_section(sections, "basis.x_bar");
  b.phi = find_section(sections, "basis.phi");
  b.kappa = find_section(sections, "basis.kappa");
  b.kappa_all = find_section(sections, "basis.kappa_all");
  b.nu = b.phi.cols();
  b.q_rows = range("basis.q_rows");
  b.w_rows = range("basis.w_rows");
  b.eps_pca = find_section(sections, "basis.eps_pca")(0);
  b.trace_cov = find_section(sections, "basis.trace_cov")(0);
  if (b.kappa.size() != b.nu || b.x_bar.size() != b.phi.rows() || b.q_rows.end() > b.phi.rows() ||
      b.w_rows.end() > b.phi.rows())
    throw io_error("inconsistent basis sections");
  b.phi_q = b.phi.middleRows(b.q_rows.start, b.q_rows.size);
  b.phi_w = b.phi.middleRows(b.w_rows.start, b.w_rows.size);
  detail::build_projection(b);
  model.scaling.shift = find_section(sections, "scaling.shift");
  model.scaling.scale = find_section(sections, "scaling.scale");
  model.prior = fit_prior(find_section(sections, "prior.centers"));
  return model;
}

}  // namespace klpost
