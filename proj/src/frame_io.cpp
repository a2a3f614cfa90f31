#include <digeo/frame_io.hpp>

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace digeo {

namespace le {

void write_u32(std::ostream& out, std::uint32_t v)
{
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    out.write(b.data(), 4);
}

void write_f64(std::ostream& out, double v)
{
    const auto bits = std::bit_cast<std::uint64_t>(v);
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
    out.write(b.data(), 8);
}

std::uint32_t read_u32(std::istream& in)
{
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw format_error("unexpected end of file");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
}

double read_f64(std::istream& in)
{
    std::array<unsigned char, 8> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw format_error("unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return std::bit_cast<double>(v);
}

} // namespace le

std::string format_double(double v)
{
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

void write_frame_binary(std::ostream& out, const Frame<double>& frame)
{
    out.write("ETF1", 4);
    le::write_u32(out, static_cast<std::uint32_t>(frame.dim()));
    le::write_u32(out, static_cast<std::uint32_t>(frame.num_classes()));
    const auto& w = frame.vectors();
    for (index_type k = 0; k < w.size(); ++k) le::write_f64(out, w.data()[k]);
}

Frame<double> read_frame_binary(std::istream& in)
{
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || std::memcmp(magic.data(), "ETF1", 4) != 0) {
        throw format_error("frame file: bad magic (expected ETF1)");
    }
    const auto dim = le::read_u32(in);
    const auto n = le::read_u32(in);
    if (dim == 0 || n == 0) throw format_error("frame file: zero dimension");
    Eigen::MatrixXd w(dim, n);
    for (index_type k = 0; k < w.size(); ++k) w.data()[k] = le::read_f64(in);
    if (in.peek() != std::char_traits<char>::eof()) throw format_error("frame file: trailing bytes");
    return Frame<double>(std::move(w));
}

void write_frame_csv(std::ostream& out, const Frame<double>& frame)
{
    const auto& w = frame.vectors();
    for (index_type c = 0; c < w.cols(); ++c) out << (c ? "," : "") << c;
    out << '\n';
    for (index_type r = 0; r < w.rows(); ++r) {
        for (index_type c = 0; c < w.cols(); ++c) out << (c ? "," : "") << format_double(w(r, c));
        out << '\n';
    }
}

Frame<double> read_frame_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) throw format_error("frame csv: missing header");
    index_type n = 0;
    {
        std::stringstream header(line);
        std::string cell;
        while (std::getline(header, cell, ',')) {
            if (cell != std::to_string(n)) throw format_error("frame csv: header must list 0..N-1");
            ++n;
        }
    }
    std::vector<double> values;
    index_type rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        index_type cols = 0;
        while (std::getline(row, cell, ',')) {
            double v = 0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
                throw format_error("frame csv: bad number '" + cell + "' on row " + std::to_string(rows + 2));
            }
            values.push_back(v);
            ++cols;
        }
        if (cols != n) throw format_error("frame csv: ragged row " + std::to_string(rows + 2));
        ++rows;
    }
    if (rows == 0 || n == 0) throw format_error("frame csv: empty frame");
    Eigen::MatrixXd w(rows, n);
    for (index_type r = 0; r < rows; ++r) {
        for (index_type c = 0; c < n; ++c) w(r, c) = values[static_cast<std::size_t>(r * n + c)];
    }
    return Frame<double>(std::move(w));
}

void save_frame(const std::filesystem::path& path, const Frame<double>& frame, bool csv)
{
    std::ofstream out(path, csv ? std::ios::out : std::ios::binary);
    if (!out) throw format_error("cannot open " + path.string() + " for writing");
    if (csv) write_frame_csv(out, frame);
    else write_frame_binary(out, frame);
    if (!out) throw format_error("write failed: " + path.string());
}

Frame<double> load_frame(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open " + path.string());
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    in.clear();
    in.seekg(0);
    if (std::memcmp(magic.data(), "ETF1", 4) == 0) return read_frame_binary(in);
    return read_frame_csv(in);
}

void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m)
{
    out << "class";
    for (index_type c = 0; c < m.cols(); ++c) out << ',' << c;
    out << '\n';
    for (index_type r = 0; r < m.rows(); ++r) {
        out << r;
        for (index_type c = 0; c < m.cols(); ++c) out << ',' << format_double(m(r, c));
        out << '\n';
    }
}

} // namespace digeo
