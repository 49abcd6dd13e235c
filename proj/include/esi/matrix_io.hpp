#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>

namespace esi::io {

// binary matrix container: "ESIM" magic, u32 rows, u32 cols, then
// rows*cols little-endian f64 in row-major order
void save_matrix(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_matrix(const std::string& path);

// text matrix: first line "rows,cols", then one comma-separated line per row;
// values formatted as shortest round-trip decimals
void save_matrix_csv(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_matrix_csv(const std::string& path);

// loads either container, keyed on the file's magic bytes
Eigen::MatrixXd load_matrix_any(const std::string& path);

// shortest decimal string that round-trips to the same double
std::string format_double(double v);
double parse_double(std::string_view s);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace esi::io
