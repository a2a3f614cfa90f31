#pragma once
#include <filesystem>
#include <iosfwd>

#include <digeo/etf_frame.hpp>

namespace digeo {

// Binary layout: "ETF1", u32 dim, u32 num_classes, dim*num_classes float64,
// column-major, all little-endian.
void write_frame_binary(std::ostream& out, const Frame<double>& frame);
Frame<double> read_frame_binary(std::istream& in);

// CSV: header row of class indices, then one row per dimension.
void write_frame_csv(std::ostream& out, const Frame<double>& frame);
Frame<double> read_frame_csv(std::istream& in);

void save_frame(const std::filesystem::path& path, const Frame<double>& frame, bool csv = false);
/// Detects the format from the leading magic bytes.
Frame<double> load_frame(const std::filesystem::path& path);

/// Symmetric matrix as CSV with class-index header and leading index column.
void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m);

namespace le {
void write_u32(std::ostream& out, std::uint32_t v);
void write_f64(std::ostream& out, double v);
std::uint32_t read_u32(std::istream& in);
double read_f64(std::istream& in);
} // namespace le

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double v);

} // namespace digeo
