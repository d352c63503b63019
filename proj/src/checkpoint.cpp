#include "hsgd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hsgd/io.hpp"

namespace hsgd {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'G', 'D', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > bytes.size()) throw ValidationError("checkpoint truncated");
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + b])) << (8 * b);
        pos += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
};

}  // namespace

std::string encode_checkpoint(const std::vector<ConvNetParams<float>>& nets) {
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(nets.size()));
    for (const auto& net : nets) {
        put_u32(out, static_cast<std::uint32_t>(net.activation));
        put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
        for (const auto& l : net.layers) {
            put_u32(out, l.block ? 0u : 1u);
            put_u32(out, static_cast<std::uint32_t>(l.in_channels));
            put_u32(out, static_cast<std::uint32_t>(l.out_channels));
            put_u32(out, static_cast<std::uint32_t>(l.kernel));
            put_u32(out, static_cast<std::uint32_t>(l.weight.size() + l.scale.size() + l.shift.size() + l.bias.size()));
            for (const auto* v : {&l.weight, &l.scale, &l.shift, &l.bias}) {
                for (float f : *v) put_f32(out, f);
            }
        }
    }
    return out;
}

std::vector<ConvNetParams<float>> decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw ValidationError("not a parameter checkpoint (bad magic)");
    }
    Reader r{bytes, sizeof kMagic};
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    if (count > 1024) throw ValidationError("implausible network count in checkpoint");
    std::vector<ConvNetParams<float>> nets(count);
    for (auto& net : nets) {
        const std::uint32_t act = r.u32();
        if (act > 1) throw ValidationError("unknown output activation in checkpoint");
        net.activation = static_cast<OutputActivation>(act);
        const std::uint32_t layers = r.u32();
        if (layers == 0 || layers > 1024) throw ValidationError("implausible layer count in checkpoint");
        int prev_out = -1;
        for (std::uint32_t li = 0; li < layers; ++li) {
            ConvLayer<float> l;
            const std::uint32_t kind = r.u32();
            if (kind > 1) throw ValidationError("unknown layer kind in checkpoint");
            l.block = kind == 0;
            l.in_channels = static_cast<int>(r.u32());
            l.out_channels = static_cast<int>(r.u32());
            l.kernel = static_cast<int>(r.u32());
            if (l.in_channels <= 0 || l.out_channels <= 0 || l.in_channels > 65536 || l.out_channels > 65536 ||
                (l.kernel != 1 && l.kernel != 3)) {
                throw ValidationError("invalid layer shape in checkpoint");
            }
            if (prev_out >= 0 && prev_out != l.in_channels) throw ValidationError("layer shapes do not chain");
            prev_out = l.out_channels;
            l.weight.resize(static_cast<std::size_t>(l.out_channels) * l.in_channels * l.taps());
            if (l.block) {
                l.scale.resize(static_cast<std::size_t>(l.out_channels));
                l.shift.resize(static_cast<std::size_t>(l.out_channels));
            } else {
                l.bias.resize(static_cast<std::size_t>(l.out_channels));
            }
            const std::uint32_t payload = r.u32();
            if (payload != l.weight.size() + l.scale.size() + l.shift.size() + l.bias.size()) {
                throw ValidationError("layer payload size does not match its shape");
            }
            for (auto* v : {&l.weight, &l.scale, &l.shift, &l.bias}) {
                for (float& f : *v) f = r.f32();
            }
            net.layers.push_back(std::move(l));
        }
        if (net.layers.back().block || net.layers.back().out_channels != 4) {
            throw ValidationError("network must end in a 4-channel output layer");
        }
    }
    if (r.pos != bytes.size()) throw ValidationError("trailing bytes in checkpoint");
    return nets;
}

void save_checkpoint(const std::string& path, const std::vector<ConvNetParams<float>>& nets) {
    write_file_atomic(path, encode_checkpoint(nets));
}

std::vector<ConvNetParams<float>> load_checkpoint(const std::string& path) {
    return decode_checkpoint(read_file(path));
}

}  // namespace hsgd
