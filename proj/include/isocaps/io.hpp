#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "isocaps/linalg.hpp"
#include "isocaps/model.hpp"

namespace isocaps {

inline constexpr const char* kModelMagic = "ISOCAPS1";
inline constexpr int kModelFormatVersion = 1;

/// Text container: magic line, format version, architecture as key=value
/// pairs, then one "tensor <name> <rows> <cols>" header per tensor followed by
/// its row-major values in %.17g, so a save/load round trip is exact.
void save_model(const Model& model, const std::filesystem::path& path);

/// Throws ModelFormatError on any deviation from the layout the stored
/// architecture implies, IoFailure if the file cannot be opened.
Model load_model(const std::filesystem::path& path);

/// Rows of space-separated values with 9 decimals (the BGD body layout).
void write_matrix_text(const Mat& m, const std::filesystem::path& path);
Mat read_matrix_text(const std::filesystem::path& path);

/// Binary 8-bit PGM (P5); values are clipped to [-1, 1] and mapped linearly
/// onto [0, 255].
void write_pgm(const Mat& m, const std::filesystem::path& path);

/// Gray level of one value under the [-1, 1] -> [0, 255] map.
unsigned char pgm_level(double value);

/// Flat key=value file. Blank lines and lines starting with '#' are ignored;
/// whitespace around keys and values is trimmed. Throws BadConfig on a line
/// without '=' or an empty key, IoFailure if the file cannot be read.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

void write_key_values(const std::map<std::string, std::string>& values, const std::filesystem::path& path);

}  // namespace isocaps
