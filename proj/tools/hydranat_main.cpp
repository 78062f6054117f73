// hydranat: seeded sampling, attention-map dumps, oracle diffing, gradient
// checking and throughput benchmarks for the Hydra-NA stack.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 I/O error.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hydranat/attnviz.hpp"
#include "hydranat/generator.hpp"
#include "hydranat/hydra.hpp"
#include "hydranat/io.hpp"
#include "hydranat/na2d.hpp"
#include "hydranat/rng.hpp"
#include "hydranat/threading.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

struct RunManifest {
    std::string command;
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    json timings_ms = json::object();
    json checks = json::array();

    void add_check(const std::string& name, bool pass, const std::string& detail = "") {
        checks.push_back({{"name", name}, {"pass", pass}, {"detail", detail}});
    }

    bool all_passed() const {
        for (const auto& c : checks)
            if (!c.at("pass").get<bool>()) return false;
        return true;
    }

    void write(const fs::path& dir) const {
        json j;
        j["command"] = command;
        j["config"] = config_path;
        j["seed"] = seed;
        j["out_dir"] = out_dir;
        j["timings_ms"] = timings_ms;
        j["checks"] = checks;
        hnat::detail::atomic_write(dir / "run_manifest.json", [&](std::ostream& os) { os << j.dump(2) << "\n"; });
    }
};

// Affine map from the generator's unsquashed output to bytes: [-1,1] to
// [0,255] with clamping; 0 lands on mid-gray 128.
std::uint8_t to_byte(float v) {
    const double unit = std::clamp((static_cast<double>(v) + 1.0) / 2.0, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(unit * 255.0));
}

struct GeneratorRun {
    hnat::GeneratorConfig cfg;
    hnat::GeneratorParams<float> params;
    hnat::Tensor<float> style;  // [1, 512]
};

// Shared setup for sample/attnmap: config, parameters (loaded or seeded),
// latent draw and mapping. One rng stream covers init and the latent, so
// the seed pins the whole run.
GeneratorRun prepare_generator(const std::string& config_path, std::uint64_t seed,
                               const std::string& params_dir) {
    GeneratorRun run;
    run.cfg = hnat::load_config_json(config_path);
    hnat::Rng rng(seed);
    if (!params_dir.empty()) {
        run.params = hnat::load_generator_params<float>(run.cfg, params_dir);
    } else {
        run.params = hnat::init_generator_params<float>(run.cfg, rng);
    }
    hnat::Tensor<float> z({1, static_cast<std::size_t>(run.cfg.latent_dim)});
    hnat::normal_fill(z, rng);
    run.style = hnat::mapping_forward(z, run.params);
    return run;
}

int cmd_sample(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
               const std::string& out_dir, const std::string& params_dir) {
    const double t0 = now_ms();
    auto cfg_probe = hnat::load_config_json(config_path);
    const std::uint64_t seed = seed_flag.value_or(cfg_probe.seed);
    auto run = prepare_generator(config_path, seed, params_dir);
    const double t1 = now_ms();
    auto img = hnat::synthesis_forward(run.style, run.cfg, run.params);
    const double t2 = now_ms();

    fs::create_directories(out_dir);
    hnat::write_hnat1(fs::path(out_dir) / "sample.hnat", img);
    const std::size_t R = img.extent(2);
    std::vector<std::uint8_t> rgb(R * R * 3);
    for (std::size_t y = 0; y < R; ++y)
        for (std::size_t x = 0; x < R; ++x)
            for (std::size_t c = 0; c < 3; ++c) rgb[(y * R + x) * 3 + c] = to_byte(img(0, c, y, x));
    hnat::write_ppm(fs::path(out_dir) / "sample.ppm", R, R, rgb);

    bool finite = true;
    for (std::size_t i = 0; i < img.size(); ++i) finite = finite && std::isfinite(img[i]);

    RunManifest manifest;
    manifest.command = "sample";
    manifest.config_path = config_path;
    manifest.seed = seed;
    manifest.out_dir = out_dir;
    manifest.timings_ms["setup"] = t1 - t0;
    manifest.timings_ms["synthesis"] = t2 - t1;
    manifest.timings_ms["total"] = now_ms() - t0;
    manifest.add_check("output_finite", finite);
    manifest.write(out_dir);

    std::cout << "sample: wrote " << (fs::path(out_dir) / "sample.ppm").string() << " (" << R << "x" << R
              << ", seed " << seed << ")\n";
    return manifest.all_passed() ? kExitOk : kExitCheckFailed;
}

int cmd_attnmap(const std::string& config_path, std::optional<std::uint64_t> seed_flag, int level, int layer,
                const std::string& out_dir, const std::string& params_dir, bool raw) {
    const double t0 = now_ms();
    auto cfg_probe = hnat::load_config_json(config_path);
    const std::uint64_t seed = seed_flag.value_or(cfg_probe.seed);
    if (layer != 1 && layer != 2) throw hnat::ConfigError("attnmap: --layer must be 1 or 2");
    auto levels = cfg_probe.levels();
    if (std::find(levels.begin(), levels.end(), level) == levels.end()) {
        throw hnat::ConfigError("attnmap: level " + std::to_string(level) + " not in config (target " +
                                std::to_string(cfg_probe.target) + ")");
    }
    auto run = prepare_generator(config_path, seed, params_dir);
    hnat::SynthCapture<float> capture;
    capture.level = level;
    capture.layer = layer;
    (void)hnat::synthesis_forward(run.style, run.cfg, run.params, &capture);
    if (!capture.filled) throw hnat::ContractError("attnmap: capture was not filled");

    // queries were scaled inside the forward pass, so no extra scale here
    auto maps = hnat::na_attention_map(capture.attn.q, capture.attn.kt, 1.0, !raw);
    auto rasters = hnat::render_grayscale(maps, true);

    fs::create_directories(out_dir);
    const std::size_t H = maps.maps.extent(2), W = maps.maps.extent(3);
    const int heads = static_cast<int>(maps.maps.extent(1));
    for (int h = 0; h < heads; ++h) {
        const std::string name = "level" + std::to_string(level) + "_layer" + std::to_string(layer) + "_head" +
                                 std::to_string(h) + ".pgm";
        hnat::write_pgm(fs::path(out_dir) / name, W, H, rasters[h]);
    }
    hnat::write_hnat1(fs::path(out_dir) / "attnmaps.hnat", maps.maps);

    bool sums_ok = true;
    if (!raw) {
        for (int h = 0; h < heads; ++h) {
            double sum = 0.0;
            for (std::size_t p = 0; p < H * W; ++p) sum += maps.maps[h * H * W + p];
            sums_ok = sums_ok && std::abs(sum - 1.0) < 1e-5;
        }
    }

    RunManifest manifest;
    manifest.command = "attnmap";
    manifest.config_path = config_path;
    manifest.seed = seed;
    manifest.out_dir = out_dir;
    manifest.timings_ms["total"] = now_ms() - t0;
    manifest.add_check("normalized_sums", sums_ok, raw ? "skipped (raw logits)" : "");
    manifest.write(out_dir);

    std::cout << "attnmap: wrote " << heads << " head maps for level " << level << " layer " << layer << " to "
              << out_dir << "\n";
    return manifest.all_passed() ? kExitOk : kExitCheckFailed;
}

template <typename T>
std::pair<double, double> oracle_diff_instance(int size, int kernel, int dilation, std::uint64_t seed) {
    const hnat::NeighborhoodSpec spec{kernel, dilation};
    const auto& map = hnat::cached_index_map(size, size, spec);
    hnat::Rng rng(seed);
    const std::size_t B = 1, h = 2, C = 4, S = static_cast<std::size_t>(size);
    auto fill = [&](hnat::Tensor<T>& t) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(2.0 * rng.next_unit() - 1.0);
    };
    hnat::Tensor<T> q({B, h, S, S, C}), kt({B, h, S, S, C}), v({B, h, S, S, C});
    hnat::Tensor<T> rpb({h, static_cast<std::size_t>(2 * kernel - 1), static_cast<std::size_t>(2 * kernel - 1)});
    fill(q);
    fill(kt);
    fill(v);
    fill(rpb);
    const double scale = 1.0 / std::sqrt(static_cast<double>(C));

    auto logits = hnat::na2d_qk(hnat::scaled(q, static_cast<T>(scale)), kt, map, rpb);
    auto got = hnat::na2d_av(hnat::softmax_last(logits), v, map);
    auto want = hnat::dense_masked_attention(q, kt, v, map, rpb, scale);

    double max_abs = 0.0, max_mag = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        max_abs = std::max(max_abs, std::abs(static_cast<double>(got[i]) - static_cast<double>(want[i])));
        max_mag = std::max(max_mag, std::abs(static_cast<double>(want[i])));
    }
    return {max_abs, max_abs / std::max(max_mag, 1e-30)};
}

int cmd_oracle_diff(const std::vector<int>& sizes, const std::vector<int>& kernels,
                    const std::vector<int>& dilations, const std::string& dtype, std::uint64_t seed,
                    const std::string& out_dir) {
    if (dtype != "f32" && dtype != "f64") throw hnat::ConfigError("oracle-diff: --dtype must be f32 or f64");
    const bool f32 = dtype == "f32";
    const double tol = f32 ? 1e-5 : 1e-10;
    const double t0 = now_ms();

    RunManifest manifest;
    manifest.command = "oracle-diff";
    manifest.seed = seed;
    manifest.out_dir = out_dir;

    double worst_abs = 0.0, worst_rel = 0.0;
    int ran = 0, skipped = 0;
    bool ok = true;
    for (int s : sizes)
        for (int k : kernels)
            for (int d : dilations) {
                const std::string tag =
                    "size=" + std::to_string(s) + " k=" + std::to_string(k) + " d=" + std::to_string(d);
                if (k * d > s || (k % 2 == 0 && k != s)) {
                    std::cout << tag << "  skipped: invalid spec\n";
                    ++skipped;
                    continue;
                }
                const std::uint64_t inst_seed = seed + 1000003ULL * static_cast<std::uint64_t>(ran);
                auto [max_abs, rel] = f32 ? oracle_diff_instance<float>(s, k, d, inst_seed)
                                          : oracle_diff_instance<double>(s, k, d, inst_seed);
                const bool pass = max_abs <= tol;
                ok = ok && pass;
                worst_abs = std::max(worst_abs, max_abs);
                worst_rel = std::max(worst_rel, rel);
                std::cout << tag << "  max-abs=" << max_abs << "  rel=" << rel << (pass ? "" : "  FAIL") << "\n";
                ++ran;
            }
    std::cout << "oracle-diff[" << dtype << "]: " << ran << " combinations, " << skipped
              << " skipped, worst max-abs=" << worst_abs << ", worst rel=" << worst_rel << ", tolerance=" << tol
              << (ok ? "  OK" : "  FAIL") << "\n";

    manifest.timings_ms["total"] = now_ms() - t0;
    manifest.add_check("oracle_equivalence_" + dtype, ok,
                       "worst max-abs " + std::to_string(worst_abs) + " vs tol " + std::to_string(tol));
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        manifest.write(out_dir);
    }
    return ok ? kExitOk : kExitCheckFailed;
}

struct GradReport {
    std::string name;
    double rel = 0.0;
};

int cmd_gradcheck(std::uint64_t seed, const std::string& dtype, const std::string& out_dir, bool inject_fault) {
    if (dtype != "f64") throw hnat::ConfigError("gradcheck: finite differences need --dtype f64");
    const double t0 = now_ms();
    const double tol = 1e-4;
    using T = double;
    hnat::Rng rng(seed);
    auto fill = [&](hnat::Tensor<T>& t) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 2.0 * rng.next_unit() - 1.0;
    };
    auto inner = [](const hnat::Tensor<T>& a, const hnat::Tensor<T>& b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
        return acc;
    };
    auto rel_err = [](double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); };
    // worst rel error of analytic vs central differences over all slots
    auto check_tensor = [&](hnat::Tensor<T>& param, const hnat::Tensor<T>& analytic, auto&& loss) {
        double worst = 0.0;
        const double h = 1e-5;
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double orig = param[i];
            param[i] = orig + h;
            const double lp = loss();
            param[i] = orig - h;
            const double lm = loss();
            param[i] = orig;
            worst = std::max(worst, rel_err(analytic[i], (lp - lm) / (2.0 * h)));
        }
        return worst;
    };

    std::vector<GradReport> reports;

    {  // na2d_qk and na2d_av adjoints on a dilated instance
        const auto& map = hnat::cached_index_map(8, 8, {3, 2});
        hnat::Tensor<T> q({1, 2, 8, 8, 4}), kt({1, 2, 8, 8, 4}), rpb({2, 5, 5}), up({1, 2, 8, 8, 9});
        fill(q);
        fill(kt);
        fill(rpb);
        fill(up);
        auto qk = hnat::na2d_qk_vjp(q, kt, map, rpb, up);
        if (inject_fault)
            for (std::size_t i = 0; i < qk.q.size(); ++i) qk.q[i] = -qk.q[i];
        auto qk_loss = [&] { return inner(hnat::na2d_qk(q, kt, map, rpb), up); };
        reports.push_back({"na2d_qk.q", check_tensor(q, qk.q, qk_loss)});
        reports.push_back({"na2d_qk.kt", check_tensor(kt, qk.kt, qk_loss)});
        reports.push_back({"na2d_qk.rpb", check_tensor(rpb, qk.rpb, qk_loss)});

        hnat::Tensor<T> attn({1, 2, 8, 8, 9}), v({1, 2, 8, 8, 4}), upv({1, 2, 8, 8, 4});
        fill(attn);
        fill(v);
        fill(upv);
        auto av = hnat::na2d_av_vjp(attn, v, map, upv);
        auto av_loss = [&] { return inner(hnat::na2d_av(attn, v, map), upv); };
        reports.push_back({"na2d_av.attn", check_tensor(attn, av.attn, av_loss)});
        reports.push_back({"na2d_av.v", check_tensor(v, av.v, av_loss)});
    }

    {  // full hydra layer: H=W=8, dim=16, heads=4, plan [(2,k3d1),(2,k3d2)]
        const int dim = 16;
        auto plan = hnat::PartitionPlan::make(4, {{3, 1}, {3, 2}});
        auto params = hnat::init_hydra_params<T>(dim, plan, true, rng);
        fill(params.qkv_weight);
        fill(params.qkv_bias);
        for (auto& r : params.rpb) fill(r);
        fill(params.proj_weight);
        fill(params.proj_bias);
        hnat::Tensor<T> x({1, 8, 8, dim}), up({1, 8, 8, dim});
        fill(x);
        fill(up);
        hnat::HydraTape<T> tape;
        (void)hnat::hydra_forward(x, plan, params, {}, &tape);
        auto grads = hnat::hydra_backward(tape, up);
        auto loss = [&] { return inner(hnat::hydra_forward(x, plan, params), up); };
        reports.push_back({"hydra.x", check_tensor(x, grads.x, loss)});
        reports.push_back({"hydra.qkv_weight", check_tensor(params.qkv_weight, grads.qkv_weight, loss)});
        reports.push_back({"hydra.qkv_bias", check_tensor(params.qkv_bias, grads.qkv_bias, loss)});
        for (std::size_t p = 0; p < params.rpb.size(); ++p)
            reports.push_back({"hydra.rpb" + std::to_string(p), check_tensor(params.rpb[p], grads.rpb[p], loss)});
        reports.push_back({"hydra.proj_weight", check_tensor(params.proj_weight, grads.proj_weight, loss)});
        reports.push_back({"hydra.proj_bias", check_tensor(params.proj_bias, grads.proj_bias, loss)});
    }

    RunManifest manifest;
    manifest.command = "gradcheck";
    manifest.seed = seed;
    manifest.out_dir = out_dir;
    bool ok = true;
    std::string worst_name;
    double worst = -1.0;
    for (const auto& r : reports) {
        const bool pass = r.rel < tol;
        ok = ok && pass;
        if (r.rel > worst) {
            worst = r.rel;
            worst_name = r.name;
        }
        std::cout << "gradcheck " << r.name << "  rel=" << r.rel << (pass ? "" : "  FAIL") << "\n";
        manifest.add_check(r.name, pass, "rel " + std::to_string(r.rel));
    }
    std::cout << "gradcheck: worst " << worst_name << " rel=" << worst << ", tolerance=" << tol
              << (ok ? "  OK" : "  FAIL") << "\n";
    manifest.timings_ms["total"] = now_ms() - t0;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        manifest.write(out_dir);
    }
    return ok ? kExitOk : kExitCheckFailed;
}

double median_ms(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    return n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

int cmd_bench(int size, int kernel, int dilation, int heads, int dim, int iters, int batch, bool compare_dense,
              std::uint64_t seed, const std::string& out_dir) {
    if (iters < 1) throw hnat::ConfigError("bench: --iters must be >= 1");
    const double t0 = now_ms();
    using T = float;
    const hnat::NeighborhoodSpec spec{kernel, dilation};
    auto plan = hnat::PartitionPlan::make(heads, {spec});
    plan.validate(size, size);

    hnat::Rng rng(seed);
    auto params = hnat::init_hydra_params<T>(dim, plan, true, rng);
    hnat::Tensor<T> x({static_cast<std::size_t>(batch), static_cast<std::size_t>(size),
                       static_cast<std::size_t>(size), static_cast<std::size_t>(dim)});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(2.0 * rng.next_unit() - 1.0);

    const double setup_start = now_ms();
    (void)hnat::cached_index_map(size, size, spec);  // built outside the timed region
    const double setup_ms = now_ms() - setup_start;

    (void)hnat::hydra_forward(x, plan, params);  // warmup
    std::vector<double> na_ms;
    for (int i = 0; i < iters; ++i) {
        const double s = now_ms();
        (void)hnat::hydra_forward(x, plan, params);
        na_ms.push_back(now_ms() - s);
    }
    const double na_med = median_ms(na_ms);
    const double na_ops = 1000.0 * batch / na_med;

    std::cout << "bench: size=" << size << " k=" << kernel << " d=" << dilation << " heads=" << heads
              << " dim=" << dim << " batch=" << batch << " iters=" << iters << "\n";
    std::cout << "  index-map setup: " << setup_ms << " ms (excluded from timing)\n";
    std::cout << "  hydra_forward: median " << na_med << " ms, " << na_ops << " img/s\n";

    // parameter/MAC accounting, including the partition-invariance view
    std::cout << "  params=" << hnat::count_params(dim, plan, true)
              << " macs=" << hnat::count_macs(dim, plan, size, size, batch) << "\n";
    for (int splits : {2, 4}) {
        if (heads % splits != 0) continue;
        std::vector<hnat::NeighborhoodSpec> specs(static_cast<std::size_t>(splits), spec);
        auto multi = hnat::PartitionPlan::make(heads, specs);
        std::cout << "  [" << splits << " equal partitions] params=" << hnat::count_params(dim, multi, true)
                  << " macs=" << hnat::count_macs(dim, multi, size, size, batch) << "\n";
    }

    RunManifest manifest;
    manifest.command = "bench";
    manifest.seed = seed;
    manifest.out_dir = out_dir;
    manifest.timings_ms["setup"] = setup_ms;
    manifest.timings_ms["hydra_forward_median"] = na_med;

    if (compare_dense) {
        const auto& map = hnat::cached_index_map(size, size, spec);
        const std::size_t cprime = static_cast<std::size_t>(dim / heads);
        hnat::Tensor<T> q({static_cast<std::size_t>(batch), static_cast<std::size_t>(heads),
                           static_cast<std::size_t>(size), static_cast<std::size_t>(size), cprime});
        auto kt = q, v = q;
        for (auto* t : {&q, &kt, &v})
            for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = static_cast<T>(2.0 * rng.next_unit() - 1.0);
        hnat::Tensor<T> rpb({static_cast<std::size_t>(heads), static_cast<std::size_t>(2 * kernel - 1),
                             static_cast<std::size_t>(2 * kernel - 1)});
        (void)hnat::dense_masked_attention(q, kt, v, map, rpb, params.scale);  // warmup
        std::vector<double> dense_samples;
        for (int i = 0; i < iters; ++i) {
            const double s = now_ms();
            (void)hnat::dense_masked_attention(q, kt, v, map, rpb, params.scale);
            dense_samples.push_back(now_ms() - s);
        }
        const double dense_med = median_ms(dense_samples);
        const double dense_ops = 1000.0 * batch / dense_med;
        const double ratio = dense_med / na_med;
        std::cout << "  dense_masked_attention: median " << dense_med << " ms, " << dense_ops << " img/s\n";
        std::cout << "  speedup hydra/dense: " << ratio << "x\n";
        manifest.timings_ms["dense_oracle_median"] = dense_med;
        manifest.add_check("na_faster_than_dense", ratio >= 1.0, "ratio " + std::to_string(ratio));
    }
    manifest.timings_ms["total"] = now_ms() - t0;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        manifest.write(out_dir);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hydra neighborhood attention toolkit"};
    app.require_subcommand(1);

    int threads = hnat::env_thread_cap();
    app.add_option("--threads", threads, "worker thread cap (or HYDRANAT_THREADS)");

    // sample
    auto* sample = app.add_subcommand("sample", "generate one image from a seeded generator");
    std::string s_config, s_out, s_params;
    std::optional<std::uint64_t> s_seed;
    sample->add_option("--config", s_config, "generator config JSON")->required();
    sample->add_option("--seed", s_seed, "seed for init and latent (default: config seed)");
    sample->add_option("--out", s_out, "output directory")->required();
    sample->add_option("--params", s_params, "parameter store directory (default: init from seed)");

    // attnmap
    auto* attnmap = app.add_subcommand("attnmap", "dump per-head attention maps for one layer");
    std::string a_config, a_out, a_params;
    std::optional<std::uint64_t> a_seed;
    int a_level = 8, a_layer = 1;
    bool a_raw = false;
    attnmap->add_option("--config", a_config, "generator config JSON")->required();
    attnmap->add_option("--seed", a_seed, "seed (default: config seed)");
    attnmap->add_option("--level", a_level, "resolution level")->required();
    attnmap->add_option("--layer", a_layer, "attention layer within the level (1 or 2)")->required();
    attnmap->add_option("--out", a_out, "output directory")->required();
    attnmap->add_option("--params", a_params, "parameter store directory");
    attnmap->add_flag("--raw", a_raw, "dump raw logits instead of softmax-normalized maps");

    // oracle-diff
    auto* oracle = app.add_subcommand("oracle-diff", "diff the NA path against the dense masked oracle");
    std::vector<int> o_sizes{7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
    std::vector<int> o_kernels{3, 5, 7};
    std::vector<int> o_dilations{1, 2, 3, 4};
    std::string o_dtype = "f64", o_out;
    std::uint64_t o_seed = 0;
    oracle->add_option("--sizes", o_sizes, "map sizes")->delimiter(',');
    oracle->add_option("--kernels", o_kernels, "kernel sizes")->delimiter(',');
    oracle->add_option("--dilations", o_dilations, "dilations")->delimiter(',');
    oracle->add_option("--dtype", o_dtype, "f32 or f64");
    oracle->add_option("--seed", o_seed, "instance seed");
    oracle->add_option("--out", o_out, "manifest directory (optional)");

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the analytic adjoints");
    std::uint64_t g_seed = 0;
    std::string g_dtype = "f64", g_out;
    bool g_fault = false;
    grad->add_option("--seed", g_seed, "instance seed");
    grad->add_option("--dtype", g_dtype, "element type (f64 only)");
    grad->add_option("--out", g_out, "manifest directory (optional)");
    grad->add_flag("--inject-fault", g_fault, "flip one adjoint's sign (sensitivity fixture)");

    // bench
    auto* bench = app.add_subcommand("bench", "throughput of hydra_forward vs the dense oracle");
    int b_size = 64, b_kernel = 7, b_dilation = 1, b_heads = 4, b_dim = 32, b_iters = 5, b_batch = 1;
    bool b_dense = false;
    std::uint64_t b_seed = 0;
    std::string b_out;
    bench->add_option("--size", b_size, "map size");
    bench->add_option("--kernel", b_kernel, "kernel size");
    bench->add_option("--dilation", b_dilation, "dilation");
    bench->add_option("--heads", b_heads, "head count");
    bench->add_option("--dim", b_dim, "channel count");
    bench->add_option("--iters", b_iters, "timed iterations");
    bench->add_option("--batch", b_batch, "batch size");
    bench->add_flag("--compare-dense", b_dense, "also time the dense masked oracle");
    bench->add_option("--seed", b_seed, "instance seed");
    bench->add_option("--out", b_out, "manifest directory (optional)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        app.exit(e);
        return kExitUsage;
    }

    hnat::set_thread_cap(threads);

    try {
        if (*sample) return cmd_sample(s_config, s_seed, s_out, s_params);
        if (*attnmap) return cmd_attnmap(a_config, a_seed, a_level, a_layer, a_out, a_params, a_raw);
        if (*oracle) return cmd_oracle_diff(o_sizes, o_kernels, o_dilations, o_dtype, o_seed, o_out);
        if (*grad) return cmd_gradcheck(g_seed, g_dtype, g_out, g_fault);
        if (*bench)
            return cmd_bench(b_size, b_kernel, b_dilation, b_heads, b_dim, b_iters, b_batch, b_dense, b_seed,
                             b_out);
    } catch (const hnat::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const hnat::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {  // dimension / spec / plan / contract errors
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
