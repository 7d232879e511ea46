#pragma once

#include <Eigen/Core>
#include <string>

namespace crg {

/// 16-bit binary PGM (P5, maxval 65535). Values are clamped to [0, 1] and
/// quantized; read returns values back in [0, 1].
void write_pgm16(const std::string& path, const Eigen::MatrixXd& image);
Eigen::MatrixXd read_pgm16(const std::string& path);

}  // namespace crg
