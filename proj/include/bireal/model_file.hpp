#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "bireal/dataset.hpp"
#include "bireal/errors.hpp"
#include "bireal/model.hpp"

// Model file layout (all integers little-endian):
//
//   "BRNM"                      magic
//   u32  version                = 1
//   u8   bit order              = 1: bit 1 is +1, element i at word i/64, bit i%64
//   i8   binary padding value   = -1
//   u8   state                  0 = master weights, 1 = inference (absorbed)
//   u8   reserved               = 0
//   u32  descriptor length, then the network descriptor as JSON
//   u32  record count
//   records, in parameter order:
//     u8   kind                 0 = f32 tensor, 1 = packed bit tensor
//     u16  name length, name
//     u8   rank, u64 extent * rank
//     payload                   f32 * numel, or u64 words * ceil(numel / 64)
//   u32  CRC-32 of every preceding byte
//
// In the inference state every binarized conv is a bit record, 1 bit per weight.

namespace bireal {

inline constexpr char kModelMagic[4] = {'B', 'R', 'N', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr std::uint8_t kBitOrderLsbFirst = 1;

enum class RecordKind : std::uint8_t { Real = 0, Bits = 1 };

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    std::vector<unsigned char>& bytes() { return bytes_; }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
    ByteReader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == size_; }

    void need(std::size_t n) const {
        if (n > size_ - pos_) throw FormatError("model file truncated");
    }

private:
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    const unsigned char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = ::crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

/// Serializes parameters (with BatchNorm running statistics) to bytes.
inline std::vector<unsigned char> encode_model(const Network<float>& net) {
    detail::ByteWriter w;
    for (char c : kModelMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u32(kModelVersion);
    w.u8(kBitOrderLsbFirst);
    w.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(-1)));
    w.u8(net.absorbed ? 1 : 0);
    w.u8(0);
    const std::string descriptor = to_json(net.spec).dump();
    w.u32(static_cast<std::uint32_t>(descriptor.size()));
    w.raw(descriptor);

    const auto params = parameters(net, true);
    w.u32(static_cast<std::uint32_t>(params.size()));
    std::size_t unit = 0;
    std::vector<const ConvUnit<float>*> units;
    detail::visit_units(net, [&](const ConvUnit<float>& u) { units.push_back(&u); });
    for (const auto& p : params) {
        const bool bits = net.absorbed && p.role == ParamRole::BinaryWeight;
        w.u8(static_cast<std::uint8_t>(bits ? RecordKind::Bits : RecordKind::Real));
        w.u16(static_cast<std::uint16_t>(p.name.size()));
        w.raw(p.name);
        const auto& shape = p.tensor->shape();
        w.u8(static_cast<std::uint8_t>(shape.size()));
        for (auto e : shape) w.u64(e);
        if (bits) {
            // locate the unit owning this weight
            while (&units[unit]->weight != p.tensor) ++unit;
            for (auto word : units[unit]->packed.words()) w.u64(word);
        } else {
            for (float v : p.tensor->data()) w.f32(v);
        }
    }
    auto& bytes = w.bytes();
    const std::uint32_t crc = detail::crc32_of(bytes.data(), bytes.size());
    w.u32(crc);
    return std::move(bytes);
}

inline Network<float> decode_model(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 24) throw FormatError("model file too short");
    if (std::memcmp(bytes.data(), kModelMagic, 4) != 0) throw FormatError("not a model file (bad magic)");
    const std::size_t body = bytes.size() - 4;
    detail::ByteReader footer(bytes.data() + body, 4);
    if (detail::crc32_of(bytes.data(), body) != footer.u32()) throw ChecksumError("model file checksum mismatch");

    detail::ByteReader r(bytes.data(), body);
    r.raw(4);
    if (r.u32() != kModelVersion) throw FormatError("unsupported model file version");
    if (r.u8() != kBitOrderLsbFirst) throw FormatError("unsupported bit order");
    if (static_cast<std::int8_t>(r.u8()) != -1) throw FormatError("unsupported binary padding convention");
    const std::uint8_t state = r.u8();
    if (state > 1) throw FormatError("unknown model state");
    r.u8();
    const std::uint32_t desc_len = r.u32();
    NetworkSpec spec;
    try {
        spec = spec_from_json(nlohmann::json::parse(r.raw(desc_len)));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed network descriptor: ") + e.what());
    } catch (const SpecError& e) {
        throw FormatError(std::string("invalid network descriptor: ") + e.what());
    }

    auto net = build<float>(spec, 0);
    net.absorbed = state == 1;
    auto params = parameters(net, true);
    if (r.u32() != params.size()) throw FormatError("record count does not match the network descriptor");
    std::vector<ConvUnit<float>*> units;
    detail::visit_units(net, [&](ConvUnit<float>& u) { units.push_back(&u); });
    std::size_t unit = 0;
    for (auto& p : params) {
        const auto kind = static_cast<RecordKind>(r.u8());
        const std::string name = r.raw(r.u16());
        if (name != p.name) throw FormatError("expected record '" + p.name + "', found '" + name + "'");
        Shape shape(r.u8());
        std::uint64_t numel = 1;
        for (auto& e : shape) {
            e = r.u64();
            if (e != 0 && numel > (std::uint64_t{1} << 40) / e) throw FormatError("record '" + name + "' shape overflow");
            numel *= e;
        }
        if (shape != p.tensor->shape())
            throw FormatError("record '" + name + "' has shape " + shape_str(shape) + ", expected " +
                              shape_str(p.tensor->shape()));
        const bool expect_bits = net.absorbed && p.role == ParamRole::BinaryWeight;
        if (kind == RecordKind::Bits) {
            if (!expect_bits) throw FormatError("unexpected bit record '" + name + "'");
            r.need(BitTensor::word_count(numel) * 8);
            std::vector<std::uint64_t> words(BitTensor::word_count(numel));
            for (auto& word : words) word = r.u64();
            while (&units[unit]->weight != p.tensor) ++unit;
            units[unit]->packed = BitTensor::from_words(shape, std::move(words));
            *p.tensor = unpack<float>(units[unit]->packed);
        } else if (kind == RecordKind::Real) {
            if (expect_bits) throw FormatError("inference model stores '" + name + "' as real values");
            r.need(numel * 4);
            for (auto& v : p.tensor->data()) v = r.f32();
        } else {
            throw FormatError("unknown record kind in '" + name + "'");
        }
    }
    if (!r.done()) throw FormatError("trailing bytes after the last record");
    return net;
}

inline void save_model(const Network<float>& net, const std::string& path) {
    const auto bytes = encode_model(net);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error writing '" + path + "'");
}

inline Network<float> load_model(const std::string& path) { return decode_model(detail::read_file(path)); }

}  // namespace bireal
