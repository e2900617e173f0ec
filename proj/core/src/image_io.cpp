#include "latshield/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "latshield/nets.hpp"

namespace latshield {

void write_pgm(const std::string& path, const Tensor& image) {
    if (image.shape().size() != 2)
        throw ShapeError("write_pgm: expected 2-D image, got " + image.shape_str());
    const int h = image.shape()[0], w = image.shape()[1];
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("write_pgm: cannot open " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> buf(static_cast<size_t>(h) * w);
    for (int i = 0; i < h * w; ++i) {
        const double v = std::min(1.0, std::max(0.0, image.at(i)));
        buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(buf.data()), buf.size());
}

Tensor read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_pgm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw IoError("read_pgm: not a binary PGM: " + path);
    int w = 0, h = 0, maxv = 0;
    f >> w >> h >> maxv;
    if (w <= 0 || h <= 0 || maxv != 255) throw IoError("read_pgm: bad header in " + path);
    f.get(); // single whitespace after maxval
    std::vector<unsigned char> buf(static_cast<size_t>(h) * w);
    f.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (static_cast<size_t>(f.gcount()) != buf.size())
        throw IoError("read_pgm: truncated pixel data in " + path);
    std::vector<double> v(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) v[i] = buf[i] / 255.0;
    return Tensor({h, w}, std::move(v), Dtype::f32);
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : path_(path), ncols_(header.size()) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    for (size_t i = 0; i < header.size(); ++i) buf_ += (i ? "," : "") + header[i];
    buf_ += "\n";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != ncols_)
        throw ValueError("csv: row width " + std::to_string(cells.size()) +
                         " != header width " + std::to_string(ncols_));
    for (size_t i = 0; i < cells.size(); ++i) buf_ += (i ? "," : "") + cells[i];
    buf_ += "\n";
}

std::string CsvWriter::num(double v) {
    char tmp[40];
    std::snprintf(tmp, sizeof(tmp), "%.9g", v);
    return tmp;
}

void CsvWriter::flush() {
    std::ofstream f(path_, std::ios::trunc);
    if (!f) throw IoError("csv: cannot write " + path_);
    f << buf_;
}

CsvWriter::~CsvWriter() {
    try {
        flush();
    } catch (...) {
    }
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("csv: cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

} // namespace latshield
