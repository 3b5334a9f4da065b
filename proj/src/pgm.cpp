#include "gage/pgm.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include "gage/errors.hpp"

namespace gage {

std::vector<uint8_t> encode_pgm(const ImageU8& img) {
    if (img.h < 1 || img.w < 1) throw IoError("encode_pgm: empty image");
    std::string header = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.v.begin(), img.v.end());
    return out;
}

namespace {

struct Cursor {
    const std::vector<uint8_t>& b;
    size_t pos = 0;
    const std::string& ctx;

    [[noreturn]] void fail(const std::string& what) const {
        throw IoError(ctx + ": " + what + " at byte offset " + std::to_string(pos));
    }
    bool eof() const { return pos >= b.size(); }
    uint8_t peek() const { return b[pos]; }

    void skip_ws() {
        bool any = false;
        while (!eof() && (peek() == ' ' || peek() == '\n' || peek() == '\r' || peek() == '\t')) {
            ++pos;
            any = true;
        }
        if (!eof() && peek() == '#') fail("comment lines are not supported");
        if (!any) fail("expected whitespace separator");
    }

    long read_int() {
        if (eof()) fail("unexpected end of header");
        if (peek() == '#') fail("comment lines are not supported");
        if (peek() < '0' || peek() > '9') fail("expected a decimal integer");
        long v = 0;
        while (!eof() && peek() >= '0' && peek() <= '9') {
            v = v * 10 + (peek() - '0');
            if (v > 1000000) fail("header integer out of range");
            ++pos;
        }
        return v;
    }
};

}  // namespace

ImageU8 decode_pgm(const std::vector<uint8_t>& bytes, const std::string& context) {
    Cursor c{bytes, 0, context};
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw IoError(context + ": not a binary PGM (magic 'P5' missing) at byte offset 0");
    c.pos = 2;
    c.skip_ws();
    const long w = c.read_int();
    c.skip_ws();
    const long h = c.read_int();
    c.skip_ws();
    const size_t maxval_pos = c.pos;
    const long maxval = c.read_int();
    if (maxval != 255) {
        c.pos = maxval_pos;
        c.fail("maxval must be 255, got " + std::to_string(maxval));
    }
    if (c.eof() || !(c.peek() == ' ' || c.peek() == '\n' || c.peek() == '\r' || c.peek() == '\t'))
        c.fail("expected single whitespace before payload");
    ++c.pos;
    if (w < 1 || h < 1) c.fail("image dimensions must be positive");
    const size_t need = size_t(w) * size_t(h);
    if (bytes.size() - c.pos < need) {
        const size_t have = bytes.size() - c.pos;
        c.pos = bytes.size();
        c.fail("payload truncated: need " + std::to_string(need) + " bytes, have " +
               std::to_string(have));
    }
    ImageU8 img{int(h), int(w)};
    std::memcpy(img.v.data(), bytes.data() + c.pos, need);
    return img;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::fseek(f.get(), 0, SEEK_END);
    const long size = std::ftell(f.get());
    if (size < 0) throw IoError("cannot stat '" + path + "'");
    std::fseek(f.get(), 0, SEEK_SET);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (size > 0 && std::fread(bytes.data(), 1, size_t(size), f.get()) != size_t(size))
        throw IoError("short read on '" + path + "'");
    return bytes;
}

void write_file_bytes(const std::string& path, const void* data, size_t size) {
    std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    if (size > 0 && std::fwrite(data, 1, size, f.get()) != size)
        throw IoError("short write on '" + path + "'");
    if (std::fflush(f.get()) != 0) throw IoError("flush failed on '" + path + "'");
}

ImageU8 read_pgm(const std::string& path) {
    return decode_pgm(read_file_bytes(path), path);
}

void write_pgm(const ImageU8& img, const std::string& path) {
    auto bytes = encode_pgm(img);
    write_file_bytes(path, bytes.data(), bytes.size());
}

}  // namespace gage
