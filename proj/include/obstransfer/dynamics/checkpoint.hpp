#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "obstransfer/dynamics/latent_model.hpp"

namespace obstransfer::ckpt {

using json = nlohmann::json;
using nn::Network;
using nn::NetworkSpec;
using nn::Shape;
using nn::Tensor;

inline constexpr int kVersion = 1;

// Unreadable, corrupt, or incompatible checkpoint.
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(std::string_view in)
{
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        const unsigned v = static_cast<unsigned char>(in[i]) << 16 | static_cast<unsigned char>(in[i + 1]) << 8 |
                           static_cast<unsigned char>(in[i + 2]);
        for (int s = 18; s >= 0; s -= 6) out += kAlphabet[(v >> s) & 63];
    }
    if (const std::size_t rest = in.size() - i) {
        unsigned v = static_cast<unsigned char>(in[i]) << 16;
        if (rest == 2) v |= static_cast<unsigned char>(in[i + 1]) << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

inline std::string base64_decode(std::string_view in)
{
    if (in.size() % 4 != 0) throw CheckpointError("base64 payload length is not a multiple of 4");
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        const bool last = i + 4 == in.size();
        const int pad = last ? (in[i + 3] == '=') + (in[i + 2] == '=') : 0;
        unsigned v = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = in[i + static_cast<std::size_t>(k)];
            const int x = k >= 4 - pad ? 0 : val(c);
            if (x < 0) throw CheckpointError("base64 payload has an invalid character");
            v = v << 6 | static_cast<unsigned>(x);
        }
        out += static_cast<char>((v >> 16) & 255);
        if (pad < 2) out += static_cast<char>((v >> 8) & 255);
        if (pad < 1) out += static_cast<char>(v & 255);
    }
    return out;
}

inline std::uint64_t to_little(std::uint64_t v)
{
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xff) << (8 * (7 - i));
    return r;
}

}  // namespace detail

inline json tensor_to_json(const Tensor& t)
{
    std::string bytes(t.size() * 8, '\0');
    for (std::size_t i = 0; i < t.size(); ++i) {
        const std::uint64_t le = detail::to_little(std::bit_cast<std::uint64_t>(t.data[i]));
        std::memcpy(bytes.data() + 8 * i, &le, 8);
    }
    return {{"shape", t.shape}, {"data", detail::base64_encode(bytes)}};
}

inline Tensor tensor_from_json(const json& j)
{
    try {
        Shape shape = j.at("shape").get<Shape>();
        const std::string bytes = detail::base64_decode(j.at("data").get<std::string>());
        if (bytes.size() != nn::shape_size(shape) * 8)
            throw CheckpointError("array payload has " + std::to_string(bytes.size() / 8) + " values, shape " +
                                  nn::shape_str(shape) + " needs " + std::to_string(nn::shape_size(shape)));
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) {
            std::uint64_t le;
            std::memcpy(&le, bytes.data() + 8 * i, 8);
            t.data[i] = std::bit_cast<double>(detail::to_little(le));
        }
        if (!t.all_finite()) throw CheckpointError("array contains non-finite values");
        return t;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed array: ") + e.what());
    }
}

inline json spec_to_json(const NetworkSpec& spec)
{
    json layers = json::array();
    for (const auto& layer : spec.layers) {
        if (const auto* d = std::get_if<nn::Dense>(&layer))
            layers.push_back({{"type", "dense"}, {"in", d->in}, {"out", d->out},
                              {"activation", nn::activation_name(d->activation)}});
        else if (const auto* c = std::get_if<nn::Conv2d>(&layer))
            layers.push_back({{"type", "conv2d"},
                              {"in_channels", c->in_channels},
                              {"out_channels", c->out_channels},
                              {"kernel", c->kernel},
                              {"stride", c->stride},
                              {"activation", nn::activation_name(c->activation)}});
        else if (std::holds_alternative<nn::Flatten>(layer))
            layers.push_back({{"type", "flatten"}});
        else
            layers.push_back({{"type", "unit_normalize"}});
    }
    return {{"input", spec.input}, {"layers", layers}};
}

inline NetworkSpec spec_from_json(const json& j)
{
    try {
        NetworkSpec spec;
        spec.input = j.at("input").get<Shape>();
        for (const auto& l : j.at("layers")) {
            const auto type = l.at("type").get<std::string>();
            if (type == "dense")
                spec.layers.push_back(nn::Dense{l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(),
                                                nn::parse_activation(l.at("activation").get<std::string>())});
            else if (type == "conv2d")
                spec.layers.push_back(nn::Conv2d{l.at("in_channels").get<std::size_t>(),
                                                 l.at("out_channels").get<std::size_t>(),
                                                 l.at("kernel").get<std::size_t>(), l.at("stride").get<std::size_t>(),
                                                 nn::parse_activation(l.at("activation").get<std::string>())});
            else if (type == "flatten")
                spec.layers.push_back(nn::Flatten{});
            else if (type == "unit_normalize")
                spec.layers.push_back(nn::UnitNormalize{});
            else
                throw CheckpointError("unknown layer type '" + type + "'");
        }
        spec.output_shape();
        return spec;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed network spec: ") + e.what());
    } catch (const ShapeError& e) {
        throw CheckpointError(std::string("inconsistent network spec: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("malformed network spec: ") + e.what());
    }
}

inline json network_to_json(const Network& net)
{
    json arrays = json::array();
    for (const auto& p : net.params()) arrays.push_back(tensor_to_json(p));
    return {{"spec", spec_to_json(net.spec())}, {"arrays", arrays}};
}

inline Network network_from_json(const json& j)
{
    try {
        NetworkSpec spec = spec_from_json(j.at("spec"));
        std::vector<Tensor> params;
        for (const auto& a : j.at("arrays")) params.push_back(tensor_from_json(a));
        return Network(std::move(spec), std::move(params));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed network: ") + e.what());
    } catch (const ShapeError& e) {
        throw CheckpointError(std::string("network arrays do not match spec: ") + e.what());
    }
}

inline json envelope(const std::string& kind, std::size_t encoding_dim, std::size_t num_actions)
{
    return {{"version", kVersion}, {"kind", kind}, {"encoding_dim", encoding_dim}, {"num_actions", num_actions}};
}

// Checks version and kind, returns the parsed document.
inline json open_envelope(const json& j, const std::string& kind)
{
    if (!j.is_object() || !j.contains("version") || !j["version"].is_number_integer())
        throw CheckpointError("checkpoint has no integer version field");
    if (j["version"].get<int>() != kVersion)
        throw CheckpointError("checkpoint version " + std::to_string(j["version"].get<int>()) + " is not supported (expected " +
                              std::to_string(kVersion) + ")");
    if (!j.contains("kind") || !j["kind"].is_string() || j["kind"].get<std::string>() != kind)
        throw CheckpointError("checkpoint kind is not '" + kind + "'");
    return j;
}

inline json latent_to_json(const dynamics::LatentModel& m)
{
    json j = envelope("latent_model", m.encoding_dim(), m.num_actions());
    j["use_bias"] = m.use_bias();
    auto group = [](const std::vector<Tensor>& ts) {
        json a = json::array();
        for (const auto& t : ts) a.push_back(tensor_to_json(t));
        return a;
    };
    j["transition_weights"] = group(m.transition_weights());
    j["transition_biases"] = group(m.transition_biases());
    j["reward_weights"] = group(m.reward_weights());
    j["reward_biases"] = group(m.reward_biases());
    return j;
}

inline dynamics::LatentModel latent_from_json(const json& doc)
{
    const json j = open_envelope(doc, "latent_model");
    try {
        auto group = [&](const char* key) {
            std::vector<Tensor> out;
            for (const auto& a : j.at(key)) out.push_back(tensor_from_json(a));
            return out;
        };
        dynamics::LatentModel m(group("transition_weights"), group("transition_biases"), group("reward_weights"),
                                group("reward_biases"), j.at("use_bias").get<bool>());
        if (m.encoding_dim() != j.at("encoding_dim").get<std::size_t>() ||
            m.num_actions() != j.at("num_actions").get<std::size_t>())
            throw CheckpointError("latent model header disagrees with its arrays");
        return m;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed latent model: ") + e.what());
    } catch (const ShapeError& e) {
        throw CheckpointError(std::string("latent model arrays: ") + e.what());
    }
}

inline void write_file(const std::string& path, const json& j)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot write checkpoint '" + path + "'");
    f << j.dump(1) << '\n';
    if (!f) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

inline json read_file(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint '" + path + "' is not valid JSON: " + e.what());
    }
}

inline void save_latent(const dynamics::LatentModel& m, const std::string& path) { write_file(path, latent_to_json(m)); }

// Loads a latent model and, when expected_dim/actions are non-zero, checks them.
inline dynamics::LatentModel load_latent(const std::string& path, std::size_t expected_dim = 0,
                                         std::size_t expected_actions = 0)
{
    auto m = latent_from_json(read_file(path));
    if (expected_dim && m.encoding_dim() != expected_dim)
        throw CheckpointError("latent model in '" + path + "' has encoding_dim " + std::to_string(m.encoding_dim()) +
                              ", agent expects " + std::to_string(expected_dim));
    if (expected_actions && m.num_actions() != expected_actions)
        throw CheckpointError("latent model in '" + path + "' has " + std::to_string(m.num_actions()) +
                              " actions, environment has " + std::to_string(expected_actions));
    return m;
}

inline void save_network(const Network& net, const std::string& kind, std::size_t encoding_dim, std::size_t num_actions,
                         const std::string& path)
{
    json j = envelope(kind, encoding_dim, num_actions);
    j["network"] = network_to_json(net);
    write_file(path, j);
}

inline Network load_network(const std::string& path, const std::string& kind)
{
    const json j = open_envelope(read_file(path), kind);
    if (!j.contains("network")) throw CheckpointError("checkpoint '" + path + "' has no network");
    return network_from_json(j["network"]);
}

}  // namespace obstransfer::ckpt
