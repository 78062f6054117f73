// End-to-end generator walkthrough: 2-split config at a toy resolution,
// seeded init, latent -> style -> image, PPM export.

#include <cmath>
#include <iostream>

#include "hydranat/generator.hpp"
#include "hydranat/io.hpp"
#include "hydranat/rng.hpp"

int main() {
    auto cfg = hnat::build_config_2split(32);
    cfg.seed = 7;
    std::cout << "levels:";
    for (int L : cfg.levels()) std::cout << " " << L;
    std::cout << "\nparams=" << hnat::count_generator_params(cfg)
              << " macs(B=1)=" << hnat::count_generator_macs(cfg, 1) << "\n";

    hnat::Rng rng(cfg.seed);
    auto params = hnat::init_generator_params<float>(cfg, rng);
    hnat::Tensor<float> z({1, 512});
    hnat::normal_fill(z, rng);
    auto img = hnat::synthesis_forward(hnat::mapping_forward(z, params), cfg, params);

    const std::size_t R = img.extent(2);
    std::vector<std::uint8_t> rgb(R * R * 3);
    for (std::size_t y = 0; y < R; ++y)
        for (std::size_t x = 0; x < R; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double unit = std::clamp((static_cast<double>(img(0, c, y, x)) + 1.0) / 2.0, 0.0, 1.0);
                rgb[(y * R + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(unit * 255.0));
            }
    hnat::write_ppm("generator_demo.ppm", R, R, rgb);
    std::cout << "wrote generator_demo.ppm (" << R << "x" << R << ")\n";
    return 0;
}
