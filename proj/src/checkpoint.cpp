#include "gage/checkpoint.hpp"

#include <cstring>

#include "gage/errors.hpp"
#include "gage/pgm.hpp"

namespace gage {

namespace {

constexpr char kMagic[4] = {'G', 'A', 'G', 'B'};
constexpr uint32_t kVersion = 1;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v & 0xff));
    out.push_back(uint8_t(v >> 8));
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xff));
}
void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::vector<uint8_t>& b;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n, const char* what) const {
        if (b.size() - pos < n)
            throw IoError(path + ": truncated checkpoint (reading " + what + " at offset " +
                          std::to_string(pos) + ")");
    }
    uint16_t u16() {
        need(2, "u16");
        uint16_t v = uint16_t(b[pos]) | uint16_t(b[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4, "u32");
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(b[pos + size_t(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    uint8_t u8() {
        need(1, "u8");
        return b[pos++];
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace

void Checkpoint::add(const std::string& name, const TensorPtr& t) {
    for (const auto& [n, _] : tensors)
        if (n == name) throw ConfigError("checkpoint: duplicate tensor name '" + name + "'");
    tensors.push_back({name, t});
}

const TensorPtr Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    return nullptr;
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
    for (auto& [k, v] : meta)
        if (k == key) {
            v = value;
            return;
        }
    meta.push_back({key, value});
}

std::string Checkpoint::meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return v;
    throw IoError("checkpoint metadata key '" + key + "' missing");
}

bool Checkpoint::has_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return true;
    return false;
}

void Checkpoint::save(const std::string& path) const {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, uint32_t(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw ConfigError("tensor name too long: " + name);
        put_u16(out, uint16_t(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(0);  // dtype f32
        out.push_back(uint8_t(t->rank()));
        for (int i = 0; i < t->rank(); ++i) put_u32(out, uint32_t(t->dim(i)));
        out.reserve(out.size() + t->data.size() * 4);
        for (float v : t->data) put_f32(out, v);
    }
    write_file_bytes(path, out.data(), out.size());

    std::string side;
    for (const auto& [k, v] : meta) side += k + "=" + v + "\n";
    write_file_bytes(path + ".meta", side.data(), side.size());
}

Checkpoint Checkpoint::load(const std::string& path) {
    auto bytes = read_file_bytes(path);
    Reader r{bytes, 0, path};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw IoError(path + ": bad magic (not a GAGB checkpoint)");
    r.pos = 4;
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = r.u32();

    Checkpoint ck;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16();
        r.need(name_len, "tensor name");
        std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
        r.pos += name_len;
        const uint8_t dtype = r.u8();
        if (dtype != 0)
            throw IoError(path + ": unsupported dtype " + std::to_string(dtype) + " for tensor '" +
                          name + "'");
        const uint8_t rank = r.u8();
        std::vector<int> dims;
        int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            const uint32_t e = r.u32();
            if (e == 0 || e > (1u << 28)) throw IoError(path + ": invalid extent in '" + name + "'");
            dims.push_back(int(e));
            numel *= e;
        }
        auto t = Tensor::zeros(dims.empty() ? std::vector<int>{1} : dims);
        if (dims.empty()) numel = 1;
        r.need(size_t(numel) * 4, "tensor payload");
        for (int64_t j = 0; j < numel; ++j) t->data[size_t(j)] = r.f32();
        ck.tensors.push_back({std::move(name), std::move(t)});
    }
    if (r.pos != bytes.size())
        throw IoError(path + ": trailing bytes after last tensor (offset " +
                      std::to_string(r.pos) + ")");

    // sidecar
    auto side = read_file_bytes(path + ".meta");
    std::string text(side.begin(), side.end());
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError(path + ".meta: malformed line '" + line + "'");
        ck.meta.push_back({line.substr(0, eq), line.substr(eq + 1)});
    }
    return ck;
}

}  // namespace gage
