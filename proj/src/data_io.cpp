#include "l1ball/data_io.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "l1ball/errors.hpp"

namespace l1ball {

namespace {

constexpr char kMagic[4] = {'L', '1', 'B', 'F'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "frame stack I/O assumes a little-endian host");

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, const std::string& path, std::size_t row) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end) {
    throw InputError(path + ": row " + std::to_string(row) + ": not a number: '" + cell + "'");
  }
  return v;
}

template <class T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw InputError(path + ": truncated frame stack header");
  return value;
}

}  // namespace

std::string format_number(double value) {
  if (value == 0.0) return "0";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw InputError(path + ": missing header row");
  table.header = split_line(line);
  const std::size_t cols = table.header.size();
  std::vector<double> flat;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_line(line);
    if (cells.size() != cols) {
      throw InputError(path + ": row " + std::to_string(rows + 1) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(cols));
    }
    for (const auto& c : cells) flat.push_back(parse_cell(c, path, rows + 1));
    ++rows;
  }
  table.values.resize(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) table.values(static_cast<Index>(i), static_cast<Index>(j)) = flat[i * cols + j];
  }
  return table;
}

void write_csv(const std::string& path, const std::vector<std::string>& header, const MatrixRef& values) {
  if (static_cast<Index>(header.size()) != values.cols()) throw InputError("write_csv: header does not match columns");
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << format_number(values(i, j));
    out << '\n';
  }
  if (!out) throw InputError("write failed: " + path);
}

void write_csv(const std::string& path, const MatrixRef& values) {
  std::vector<std::string> header;
  for (Index j = 0; j < values.cols(); ++j) header.push_back("c" + std::to_string(j));
  write_csv(path, header, values);
}

FrameStack read_frame_stack(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw InputError(path + ": not a frame stack file");
  const auto version = read_raw<std::uint32_t>(in, path);
  if (version != kVersion) throw InputError(path + ": unsupported frame stack version " + std::to_string(version));
  const auto t = read_raw<std::uint64_t>(in, path);
  const auto h = read_raw<std::uint64_t>(in, path);
  const auto w = read_raw<std::uint64_t>(in, path);
  if (t == 0 || h == 0 || w == 0) throw InputError(path + ": empty frame stack");
  FrameStack stack;
  stack.height = static_cast<Index>(h);
  stack.width = static_cast<Index>(w);
  // Row-major on disk, one frame per row.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> buf(static_cast<Index>(t),
                                                                              static_cast<Index>(h * w));
  const auto bytes = static_cast<std::streamsize>(sizeof(double) * t * h * w);
  if (!in.read(reinterpret_cast<char*>(buf.data()), bytes)) throw InputError(path + ": truncated frame data");
  stack.frames = buf;
  return stack;
}

void write_frame_stack(const std::string& path, const FrameStack& stack) {
  if (stack.height < 1 || stack.width < 1 || stack.frames.cols() != stack.height * stack.width ||
      stack.frames.rows() < 1) {
    throw InputError("write_frame_stack: frames must be T x (height * width)");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out.write(kMagic, 4);
  write_raw(out, kVersion);
  write_raw(out, static_cast<std::uint64_t>(stack.frames.rows()));
  write_raw(out, static_cast<std::uint64_t>(stack.height));
  write_raw(out, static_cast<std::uint64_t>(stack.width));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> buf = stack.frames;
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(sizeof(double) * buf.size()));
  if (!out) throw InputError("write failed: " + path);
}

}  // namespace l1ball
