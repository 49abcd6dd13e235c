#include "esi/matrix_io.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>
#include <vector>

#include "esi/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "matrix container assumes a little-endian host");

namespace esi::io {

namespace {

constexpr char kMagic[4] = {'E', 'S', 'I', 'M'};
constexpr std::uint32_t kMaxDim = 1u << 26;  // 64M rows or cols is already absurd

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

void save_matrix(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, 4);
  write_u32(out, std::uint32_t(m.rows()));
  write_u32(out, std::uint32_t(m.cols()));
  // row-major on disk; Eigen default storage is column-major, so emit per row
  std::vector<double> row(std::size_t(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[std::size_t(j)] = m(i, j);
    out.write(reinterpret_cast<const char*>(row.data()),
              std::streamsize(row.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failure: " + path);
}

Eigen::MatrixXd load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad magic in matrix file: " + path);
  const std::uint32_t rows = read_u32(in);
  const std::uint32_t cols = read_u32(in);
  if (!in || rows > kMaxDim || cols > kMaxDim)
    throw IoError("bad header in matrix file: " + path);
  Eigen::MatrixXd m(rows, cols);
  std::vector<double> row(cols);
  for (std::uint32_t i = 0; i < rows; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), std::streamsize(cols * sizeof(double)));
    if (!in) throw IoError("truncated matrix file: " + path);
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = row[j];
  }
  return m;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw IoError("cannot parse number: '" + std::string(s) + "'");
  return v;
}

void save_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << m.rows() << ',' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failure: " + path);
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace

Eigen::MatrixXd load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty matrix csv: " + path);
  const auto header = split_fields(strip_cr(line));
  if (header.size() != 2) throw IoError("bad matrix csv header: " + path);
  long rows = 0, cols = 0;
  try {
    rows = long(parse_double(header[0]));
    cols = long(parse_double(header[1]));
  } catch (const IoError&) {
    throw IoError("bad matrix csv header: " + path);
  }
  if (rows < 0 || cols < 0 || rows > long(kMaxDim) || cols > long(kMaxDim))
    throw IoError("bad matrix csv header: " + path);
  Eigen::MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw IoError("truncated matrix csv: " + path);
    const auto fields = split_fields(strip_cr(line));
    if (long(fields.size()) != cols) throw IoError("ragged matrix csv row: " + path);
    for (long j = 0; j < cols; ++j) m(i, j) = parse_double(fields[std::size_t(j)]);
  }
  return m;
}

Eigen::MatrixXd load_matrix_any(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  in.close();
  if (in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0) return load_matrix(path);
  return load_matrix_csv(path);
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(content.data(), std::streamsize(content.size()));
  if (!out) throw IoError("write failure: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure: " + path);
  return ss.str();
}

}  // namespace esi::io
