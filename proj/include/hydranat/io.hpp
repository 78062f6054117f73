#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hydranat/errors.hpp"
#include "hydranat/generator.hpp"
#include "hydranat/tensor.hpp"

namespace hnat {

static_assert(std::endian::native == std::endian::little,
              "HNAT1 writer assumes a little-endian host");

namespace detail {

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename T>
constexpr std::uint8_t hnat1_dtype() {
    return std::is_same_v<T, float> ? 0 : 1;
}

// Writes through a temp file and renames; partial writes never clobber an
// existing artifact.
template <typename Fn>
void atomic_write(const std::filesystem::path& path, Fn&& fill) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
        fill(os);
        if (!os) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename to " + path.string() + " failed: " + ec.message());
}

}  // namespace detail

// Raw tensor format: `HNAT1\n`, u32 LE ndim, ndim u32 LE extents, u8 dtype
// (0 = f32, 1 = f64), row-major LE payload. No padding.
template <typename T>
void write_hnat1(std::ostream& os, const Tensor<T>& t) {
    os.write("HNAT1\n", 6);
    detail::put_u32_le(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto e : t.shape()) detail::put_u32_le(os, static_cast<std::uint32_t>(e));
    const std::uint8_t dtype = detail::hnat1_dtype<T>();
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <typename T>
void write_hnat1(const std::filesystem::path& path, const Tensor<T>& t) {
    detail::atomic_write(path, [&](std::ostream& os) { write_hnat1(os, t); });
}

template <typename T>
Tensor<T> read_hnat1(std::istream& is, const std::string& what = "<stream>") {
    char magic[6];
    is.read(magic, 6);
    if (!is || std::memcmp(magic, "HNAT1\n", 6) != 0) throw IoError(what + ": not an HNAT1 file");
    const std::uint32_t ndim = detail::get_u32_le(is);
    if (ndim > 16) throw IoError(what + ": implausible ndim " + std::to_string(ndim));
    Shape shape(ndim);
    for (auto& e : shape) e = detail::get_u32_le(is);
    std::uint8_t dtype = 0;
    is.read(reinterpret_cast<char*>(&dtype), 1);
    if (!is) throw IoError(what + ": truncated header");
    if (dtype != detail::hnat1_dtype<T>()) {
        throw IoError(what + ": dtype code " + std::to_string(dtype) + " does not match requested element type");
    }
    Tensor<T> t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
    if (!is) throw IoError(what + ": truncated payload");
    return t;
}

template <typename T>
Tensor<T> read_hnat1(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_hnat1<T>(is, path.string());
}

// Binary PGM, maxval 255.
inline void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      const std::vector<std::uint8_t>& gray) {
    if (gray.size() != width * height) throw DimensionError("write_pgm: pixel count mismatch");
    detail::atomic_write(path, [&](std::ostream& os) {
        os << "P5\n" << width << " " << height << "\n255\n";
        os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    });
}

// Binary PPM, maxval 255, interleaved RGB.
inline void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != width * height * 3) throw DimensionError("write_ppm: pixel count mismatch");
    detail::atomic_write(path, [&](std::ostream& os) {
        os << "P6\n" << width << " " << height << "\n255\n";
        os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    });
}

// ---- parameter store: one HNAT1 file per tensor plus a params.json
// manifest mapping name -> file, shape, dtype ----

template <typename T>
void save_tensor_store(const std::filesystem::path& dir,
                       const std::vector<std::pair<std::string, const Tensor<T>*>>& entries) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["tensors"] = nlohmann::json::array();
    for (const auto& [name, tensor] : entries) {
        const std::string file = name + ".hnat";
        write_hnat1(dir / file, *tensor);
        nlohmann::json rec;
        rec["name"] = name;
        rec["file"] = file;
        rec["shape"] = tensor->shape();
        rec["dtype"] = std::is_same_v<T, float> ? "f32" : "f64";
        manifest["tensors"].push_back(rec);
    }
    detail::atomic_write(dir / "params.json", [&](std::ostream& os) { os << manifest.dump(2) << "\n"; });
}

template <typename T>
std::map<std::string, Tensor<T>> load_tensor_store(const std::filesystem::path& dir) {
    std::ifstream is(dir / "params.json");
    if (!is) throw IoError("cannot open " + (dir / "params.json").string());
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad manifest " + (dir / "params.json").string() + ": " + e.what());
    }
    std::map<std::string, Tensor<T>> out;
    for (const auto& rec : manifest.at("tensors")) {
        const std::string name = rec.at("name").get<std::string>();
        const std::string file = rec.at("file").get<std::string>();
        Tensor<T> t = read_hnat1<T>(dir / file);
        const Shape expect = rec.at("shape").get<Shape>();
        if (t.shape() != expect) {
            throw IoError("tensor " + name + " shape " + shape_str(t.shape()) + " does not match manifest " +
                          shape_str(expect));
        }
        out.emplace(name, std::move(t));
    }
    return out;
}

// Single-layer parameter store, same manifest format. The scale scalar
// rides along as a one-element tensor.
template <typename T>
void save_hydra_params(const std::filesystem::path& dir, const HydraParams<T>& params) {
    Tensor<T> scale({1}, params.scale);
    std::vector<std::pair<std::string, const Tensor<T>*>> entries;
    entries.emplace_back("qkv.w", &params.qkv_weight);
    if (!params.qkv_bias.empty()) entries.emplace_back("qkv.b", &params.qkv_bias);
    for (std::size_t p = 0; p < params.rpb.size(); ++p)
        entries.emplace_back("rpb" + std::to_string(p), &params.rpb[p]);
    entries.emplace_back("proj.w", &params.proj_weight);
    entries.emplace_back("proj.b", &params.proj_bias);
    entries.emplace_back("scale", &scale);
    save_tensor_store(dir, entries);
}

template <typename T>
HydraParams<T> load_hydra_params(const std::filesystem::path& dir) {
    auto store = load_tensor_store<T>(dir);
    auto take = [&](const std::string& name, bool required) {
        auto it = store.find(name);
        if (it == store.end()) {
            if (required) throw IoError("hydra parameter store misses tensor " + name);
            return Tensor<T>{};
        }
        Tensor<T> t = std::move(it->second);
        store.erase(it);
        return t;
    };
    HydraParams<T> params;
    params.qkv_weight = take("qkv.w", true);
    params.qkv_bias = take("qkv.b", false);
    params.proj_weight = take("proj.w", true);
    params.proj_bias = take("proj.b", true);
    Tensor<T> scale = take("scale", true);
    if (scale.size() != 1) throw IoError("hydra parameter store: scale must be a single element");
    params.scale = scale[0];
    for (std::size_t p = 0; store.count("rpb" + std::to_string(p)); ++p)
        params.rpb.push_back(take("rpb" + std::to_string(p), true));
    if (!store.empty()) throw IoError("hydra parameter store has unused tensors");
    return params;
}

template <typename T>
void save_generator_params(const std::filesystem::path& dir, GeneratorParams<T>& params) {
    std::vector<std::pair<std::string, const Tensor<T>*>> entries;
    visit_params(params, [&](const std::string& name, Tensor<T>& t) { entries.emplace_back(name, &t); });
    save_tensor_store(dir, entries);
}

// Loads into a freshly shaped parameter set; every tensor must be present
// with the exact shape the config implies.
template <typename T>
GeneratorParams<T> load_generator_params(const GeneratorConfig& cfg, const std::filesystem::path& dir) {
    Rng shape_rng(0);
    GeneratorParams<T> params = init_generator_params<T>(cfg, shape_rng);
    auto store = load_tensor_store<T>(dir);
    visit_params(params, [&](const std::string& name, Tensor<T>& t) {
        auto it = store.find(name);
        if (it == store.end()) throw IoError("parameter store misses tensor " + name);
        if (it->second.shape() != t.shape()) {
            throw IoError("tensor " + name + " shape " + shape_str(it->second.shape()) +
                          " does not match config shape " + shape_str(t.shape()));
        }
        t = std::move(it->second);
        store.erase(it);
    });
    if (!store.empty()) throw IoError("parameter store has " + std::to_string(store.size()) + " unused tensors");
    return params;
}

// ---- generator config JSON ----
// {"target": int, "design": "2split"|"pyramid", "channels": {level: int},
//  "heads": {level: int}, "min_heads": int, "seed": int}

inline GeneratorConfig config_from_json(const nlohmann::json& j) {
    GeneratorConfig cfg;
    try {
        const int target = j.at("target").get<int>();
        const std::string design = j.value("design", std::string("2split"));
        const int min_heads = j.value("min_heads", 4);
        if (design == "2split") {
            cfg = build_config_2split(target, min_heads);
        } else if (design == "pyramid") {
            cfg = build_config_pyramid(target, {}, min_heads);
        } else {
            throw ConfigError("config: unknown design '" + design + "'");
        }
        auto level_key = [](const std::string& key) {
            try {
                return std::stoi(key);
            } catch (const std::exception&) {
                throw ConfigError("config: bad level key '" + key + "'");
            }
        };
        if (j.contains("channels")) {
            for (const auto& [key, val] : j.at("channels").items()) cfg.channels[level_key(key)] = val.get<int>();
        }
        if (j.contains("heads")) {
            for (const auto& [key, val] : j.at("heads").items()) cfg.heads[level_key(key)] = val.get<int>();
        }
        cfg.seed = j.value("seed", 0ULL);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline GeneratorConfig load_config_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

inline nlohmann::json config_to_json(const GeneratorConfig& cfg) {
    nlohmann::json j;
    j["target"] = cfg.target;
    j["design"] = cfg.design;
    for (const auto& [level, c] : cfg.channels) j["channels"][std::to_string(level)] = c;
    for (const auto& [level, h] : cfg.heads) j["heads"][std::to_string(level)] = h;
    j["min_heads"] = cfg.min_heads;
    j["seed"] = cfg.seed;
    return j;
}

inline void save_config_json(const std::filesystem::path& path, const GeneratorConfig& cfg) {
    detail::atomic_write(path, [&](std::ostream& os) { os << config_to_json(cfg).dump(2) << "\n"; });
}

}  // namespace hnat
