#pragma once

// Binary checkpoint container.
//
// Layout (all integers and reals little-endian):
//   "SIGCKPT1"                      8-byte magic
//   u64 record_count
//   record_count x {
//     u32 name_length, name bytes,
//     u32 rank, u64 dims[rank],
//     f64 payload[prod(dims)]
//   }

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sig/tensor.hpp"

namespace sig {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kCheckpointMagic = "SIGCKPT1";

struct NamedTensor {
    std::string name;
    Tensor value;
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
    std::array<char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    out.append(b.data(), b.size());
}

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    template <class T>
    T get(const char* what) {
        if (pos_ + sizeof(T) > data_.size()) throw CheckpointError(std::string("checkpoint truncated reading ") + what);
        std::array<char, sizeof(T)> b;
        std::memcpy(b.data(), data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, b.data(), sizeof(T));
        return v;
    }

    std::string_view bytes(std::size_t n, const char* what) {
        if (pos_ + n > data_.size()) throw CheckpointError(std::string("checkpoint truncated reading ") + what);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == data_.size(); }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& records) {
    std::string out(kCheckpointMagic);
    detail::put_le<std::uint64_t>(out, records.size());
    for (const auto& r : records) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
        out += r.name;
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.value.rank()));
        for (std::size_t d : r.value.shape()) detail::put_le<std::uint64_t>(out, d);
        for (double x : r.value.values()) detail::put_le<double>(out, x);
    }
    return out;
}

inline std::vector<NamedTensor> decode_checkpoint(std::string_view data) {
    detail::Reader in(data);
    if (in.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic) {
        throw CheckpointError("not a checkpoint: unknown magic");
    }
    const auto count = in.get<std::uint64_t>("record count");
    std::vector<NamedTensor> records;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = in.get<std::uint32_t>("name length");
        std::string name(in.bytes(name_len, "name"));
        const auto rank = in.get<std::uint32_t>("rank");
        if (rank > 8) throw CheckpointError("checkpoint record '" + name + "' has implausible rank");
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(in.get<std::uint64_t>("dims"));
        std::vector<double> values(shape_size(shape));
        for (double& x : values) x = in.get<double>("payload");
        records.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    if (!in.done()) throw CheckpointError("checkpoint has trailing bytes");
    return records;
}

inline void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open '" + path.string() + "' for writing");
    const std::string bytes = encode_checkpoint(records);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("failed writing '" + path.string() + "'");
}

inline std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace sig
