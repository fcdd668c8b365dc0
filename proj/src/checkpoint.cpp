#include "mtlk/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mtlk::io {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'L', 'K'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string string() {
        const std::uint32_t len = u32();
        need(len);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
        pos_ += len;
        return s;
    }

    void raw(char* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    bool exhausted() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw ValueError("container: truncated file");
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void Container::put(const std::string& name, Shape shape, std::vector<double> data) {
    std::size_t expect = 1;
    for (std::size_t d : shape) expect *= d;
    if (expect != data.size()) throw ShapeError("container: shape does not match data length");
    if (has(name)) throw ValueError("container: duplicate array name '" + name + "'");
    arrays.push_back({name, std::move(shape), std::move(data)});
}

void Container::put(const std::string& name, const Tensor& tensor) {
    put(name, tensor.shape(), tensor.values());
}

void Container::put_scalar(const std::string& name, double value) {
    put(name, Shape{1}, std::vector<double>{value});
}

bool Container::has(const std::string& name) const {
    for (const NamedArray& a : arrays) {
        if (a.name == name) return true;
    }
    return false;
}

const NamedArray& Container::get(const std::string& name) const {
    for (const NamedArray& a : arrays) {
        if (a.name == name) return a;
    }
    throw ValueError("container: missing array '" + name + "'");
}

Tensor Container::tensor(const std::string& name) const {
    const NamedArray& a = get(name);
    return Tensor::from_data(a.shape, a.data);
}

double Container::scalar_value(const std::string& name) const {
    const NamedArray& a = get(name);
    if (a.data.size() != 1) throw ValueError("container: '" + name + "' is not a scalar");
    return a.data[0];
}

std::vector<std::uint8_t> encode_container(const Container& container) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kFormatVersion);
    put_u64(out, container.seed);
    put_string(out, container.config_echo);
    put_u32(out, static_cast<std::uint32_t>(container.arrays.size()));
    for (const NamedArray& a : container.arrays) {
        put_string(out, a.name);
        put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
        for (std::size_t d : a.shape) put_u64(out, d);
        for (double v : a.data) put_f64(out, v);
    }
    return out;
}

Container decode_container(const std::vector<std::uint8_t>& bytes) {
    Reader reader(bytes);
    char magic[4];
    reader.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw ValueError("container: bad magic (not a checkpoint/dataset file)");
    }
    const std::uint32_t version = reader.u32();
    if (version != kFormatVersion) {
        throw ValueError("container: unsupported format version " + std::to_string(version));
    }
    Container container;
    container.seed = reader.u64();
    container.config_echo = reader.string();
    const std::uint32_t n = reader.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        NamedArray a;
        a.name = reader.string();
        const std::uint32_t ndim = reader.u32();
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            a.shape.push_back(static_cast<std::size_t>(reader.u64()));
            count *= a.shape.back();
        }
        a.data.resize(count);
        for (double& v : a.data) v = reader.f64();
        container.arrays.push_back(std::move(a));
    }
    if (!reader.exhausted()) throw ValueError("container: trailing bytes");
    return container;
}

void save_container(const std::filesystem::path& path, const Container& container) {
    const std::vector<std::uint8_t> bytes = encode_container(container);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValueError("container: cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ValueError("container: short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Container load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ValueError("container: cannot open " + path.string());
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw ValueError("container: read failure on " + path.string());
    return decode_container(bytes);
}

}  // namespace mtlk::io
