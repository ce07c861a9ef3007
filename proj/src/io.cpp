#include "refattn/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace refattn {

Matrix load_csv_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<double> values;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t this_cols = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError(path + ": bad number '" + cell + "' on line " +
                              std::to_string(rows + 1));
            }
            ++this_cols;
        }
        if (rows == 0) {
            cols = this_cols;
        } else if (this_cols != cols) {
            throw IoError(path + ": ragged row on line " + std::to_string(rows + 1));
        }
        ++rows;
    }
    if (rows == 0) throw IoError(path + ": empty matrix");
    return Matrix(rows, cols, std::move(values));
}

void save_gate_csv(const std::string& path, const Matrix& gates) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "token_index,gate\n";
    char buf[48];
    for (std::size_t i = 0; i < gates.rows(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, gates(i, 0));
        out << buf;
    }
    if (!out) throw IoError("write failed for " + path);
}

void save_gate_pgm(const std::string& path, const Matrix& gates) {
    const std::size_t n = gates.rows();
    const std::size_t side = static_cast<std::size_t>(std::llround(std::sqrt(double(n))));
    if (side * side != n) {
        throw DimensionError("save_gate_pgm: " + std::to_string(n) +
                             " gates is not a perfect square");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << side << " " << side << "\n255\n";
    for (std::size_t i = 0; i < n; ++i) {
        const double g = std::min(1.0, std::max(0.0, gates(i, 0)));
        const unsigned char byte = static_cast<unsigned char>(std::lround(255.0 * g));
        out.put(static_cast<char>(byte));
    }
    if (!out) throw IoError("write failed for " + path);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << content;
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace refattn
