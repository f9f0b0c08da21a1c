#pragma once

#include <string>
#include <vector>

#include "l1ball/projection.hpp"

namespace l1ball {

/// Numeric CSV with one header row.
struct CsvTable {
  std::vector<std::string> header;
  Matrix values;
};

/// Throws InputError on a missing file, ragged rows or non-numeric cells.
CsvTable read_csv(const std::string& path);
/// Writes with 17 significant digits so values round-trip exactly; literal
/// zeros are written as "0".
void write_csv(const std::string& path, const std::vector<std::string>& header, const MatrixRef& values);
/// header defaults to c0, c1, ... when empty.
void write_csv(const std::string& path, const MatrixRef& values);

/// Frame stack file: ASCII magic "L1BF", uint32 version (1), uint64 T, uint64
/// height, uint64 width, then T * height * width little-endian doubles with
/// each frame row-major.
struct FrameStack {
  Matrix frames;  // T x (height * width)
  Index height = 0;
  Index width = 0;
};

FrameStack read_frame_stack(const std::string& path);
void write_frame_stack(const std::string& path, const FrameStack& stack);

/// Formats a double the way the CSV writer does.
std::string format_number(double value);

}  // namespace l1ball
