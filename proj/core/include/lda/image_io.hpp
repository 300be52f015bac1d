#pragma once

#include <filesystem>

#include "lda/tensor.hpp"

namespace lda {

// Binary PGM (P5).  Values are clamped to [0,1] and scaled to the maxval;
// 16-bit samples are written most significant byte first, as the format
// requires.  Only single-channel tensors are accepted.
void write_pgm(const std::filesystem::path& path, const Tensor& img, int bits = 8);

// Reads an 8- or 16-bit binary PGM back to [0,1].
Tensor read_pgm(const std::filesystem::path& path);

}  // namespace lda
