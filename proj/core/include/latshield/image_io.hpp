#pragma once

#include <string>
#include <vector>

#include "latshield/tensor.hpp"

namespace latshield {

/// Writes a [32,32] (or any 2-D) image in [0,1] as binary PGM (P5, 8-bit).
void write_pgm(const std::string& path, const Tensor& image);

/// Reads a binary P5 PGM into a [H,W] f32 tensor in [0,1].
Tensor read_pgm(const std::string& path);

/// Minimal CSV writer: one header row then data rows, 9 significant digits.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);
    void row(const std::vector<std::string>& cells);
    static std::string num(double v);

private:
    std::string path_;
    std::string buf_;
    size_t ncols_;
    void flush();
    friend class CsvScope;
public:
    ~CsvWriter();
};

/// Parses a CSV file into rows of strings (no quoting support; the project
/// never emits quoted cells).
std::vector<std::vector<std::string>> read_csv(const std::string& path);

} // namespace latshield
