#pragma once

#include <string>

#include "refattn/matrix.hpp"

namespace refattn {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Plain comma-separated doubles, one matrix row per line.
Matrix load_csv_matrix(const std::string& path);

// Gate vector as "token_index,gate" header plus one data row per token,
// gates printed with 17 significant digits.
void save_gate_csv(const std::string& path, const Matrix& gates);

// Binary P5 with maxval 255; gates quantized as round(255 * g) and
// reshaped to side x side (side = sqrt(rows), which must be exact).
void save_gate_pgm(const std::string& path, const Matrix& gates);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace refattn
