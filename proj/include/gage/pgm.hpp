#pragma once

#include <string>
#include <vector>

#include "gage/image.hpp"

namespace gage {

// Binary PGM (P5), maxval 255, no comment lines. Header written exactly as
// "P5\n<width> <height>\n255\n" so files are byte-reproducible.
std::vector<uint8_t> encode_pgm(const ImageU8& img);
ImageU8 decode_pgm(const std::vector<uint8_t>& bytes, const std::string& context);

ImageU8 read_pgm(const std::string& path);
void write_pgm(const ImageU8& img, const std::string& path);

// Whole-file helpers shared by manifest/PGM code.
std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const void* data, size_t size);

}  // namespace gage
