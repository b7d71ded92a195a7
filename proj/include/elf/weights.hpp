#pragma once

// ELFW weight archive.
//
// Little-endian layout:
//   "ELFW" | u32 version (=1) | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 dtype (0 = f32, 1 = f64) | u8 ndim | u32 dims[ndim] | payload
//
// Convolution layer `L` is stored as two tensors, `L.weight` (out x in x kh x kw)
// and `L.bias` (out). A missing bias reads as zeros.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "elf/error.hpp"
#include "elf/tensor.hpp"

namespace elf {

static_assert(std::endian::native == std::endian::little, "ELFW I/O assumes a little-endian host");

struct ConvParams {
    Tensor weights;
    std::vector<double> bias;  // empty means zeros
};

enum class StorageType : std::uint8_t { f32 = 0, f64 = 1 };

class WeightArchive {
public:
    std::map<std::string, ConvParams> entries;

    bool contains(const std::string& layer) const { return entries.count(layer) != 0; }

    const ConvParams& at(const std::string& layer) const {
        auto it = entries.find(layer);
        if (it == entries.end()) throw FormatError("weight archive has no entry for layer '" + layer + "'");
        return it->second;
    }
};

namespace detail {

class ByteReader {
public:
    explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    template <typename T>
    T read() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string read_string(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("ELFW: truncated payload");
    }

    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void write_tensor(std::ostream& os, const std::string& name, const Tensor& t, StorageType dtype) {
    if (name.size() > 0xFFFF) throw FormatError("ELFW: tensor name too long");
    put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.dims()) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : t.data()) {
        if (dtype == StorageType::f32)
            put<float>(os, static_cast<float>(v));
        else
            put<double>(os, v);
    }
}

}  // namespace detail

inline WeightArchive parse_weights(std::vector<char> bytes) {
    detail::ByteReader in(std::move(bytes));
    if (in.read_string(4) != "ELFW") throw FormatError("ELFW: bad magic");
    if (auto version = in.read<std::uint32_t>(); version != 1)
        throw FormatError("ELFW: unsupported version " + std::to_string(version));
    const auto count = in.read<std::uint32_t>();

    std::map<std::string, Tensor> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = in.read_string(in.read<std::uint16_t>());
        const auto dtype = in.read<std::uint8_t>();
        if (dtype > 1) throw FormatError("ELFW: unknown dtype " + std::to_string(dtype) + " for '" + name + "'");
        const auto ndim = in.read<std::uint8_t>();
        if (ndim == 0 || ndim > 8) throw FormatError("ELFW: bad rank for '" + name + "'");
        Dims dims(ndim);
        std::uint64_t n = 1;
        for (auto& d : dims) {
            d = in.read<std::uint32_t>();
            if (d == 0) throw FormatError("ELFW: zero extent in '" + name + "'");
            n *= d;
            if (n > (std::uint64_t{1} << 34)) throw FormatError("ELFW: tensor '" + name + "' too large");
        }
        std::vector<double> data(n);
        for (auto& v : data) v = dtype == 0 ? static_cast<double>(in.read<float>()) : in.read<double>();
        if (!tensors.emplace(name, Tensor(std::move(dims), std::move(data))).second)
            throw FormatError("ELFW: duplicate tensor '" + name + "'");
    }
    if (!in.at_end()) throw FormatError("ELFW: trailing bytes after last tensor");

    WeightArchive archive;
    for (auto& [name, t] : tensors) {
        const auto dot = name.rfind('.');
        const std::string layer = name.substr(0, dot), field = dot == std::string::npos ? "" : name.substr(dot + 1);
        if (field == "weight") {
            if (t.rank() != 4) throw FormatError("ELFW: '" + name + "' must be rank 4, got " + to_string(t.dims()));
            archive.entries[layer].weights = std::move(t);
        } else if (field == "bias") {
            if (t.rank() != 1) throw FormatError("ELFW: '" + name + "' must be rank 1");
            auto d = t.data();
            archive.entries[layer].bias.assign(d.begin(), d.end());
        } else {
            throw FormatError("ELFW: tensor '" + name + "' is neither <layer>.weight nor <layer>.bias");
        }
    }
    for (const auto& [layer, p] : archive.entries) {
        if (p.weights.empty()) throw FormatError("ELFW: layer '" + layer + "' has a bias but no weight");
        if (!p.bias.empty() && p.bias.size() != p.weights.dim(0))
            throw FormatError("ELFW: bias of '" + layer + "' does not match its filter count");
    }
    return archive;
}

inline WeightArchive load_weights(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open weight archive " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_weights(std::move(bytes));
}

inline void save_weights(const WeightArchive& archive, const std::filesystem::path& path,
                         StorageType dtype = StorageType::f64) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write weight archive " + path.string());
    os.write("ELFW", 4);
    detail::put<std::uint32_t>(os, 1);
    std::uint32_t count = 0;
    for (const auto& [_, p] : archive.entries) count += p.bias.empty() ? 1 : 2;
    detail::put<std::uint32_t>(os, count);
    for (const auto& [layer, p] : archive.entries) {
        detail::write_tensor(os, layer + ".weight", p.weights, dtype);
        if (!p.bias.empty()) detail::write_tensor(os, layer + ".bias", Tensor({p.bias.size()}, p.bias), dtype);
    }
    if (!os) throw FormatError("failed writing weight archive " + path.string());
}

}  // namespace elf
