// Minimal library walkthrough: build a two-partition Hydra-NA layer, run it
// on random input, compare the attention core against the dense masked
// reference, and dump one head's pooled attention map as a PGM.

#include <cmath>
#include <iostream>

#include "hydranat/attnviz.hpp"
#include "hydranat/hydra.hpp"
#include "hydranat/io.hpp"
#include "hydranat/na2d.hpp"
#include "hydranat/rng.hpp"

int main() {
    const int H = 16, W = 16, dim = 32, heads = 4;

    // one dense partition (k=7, d=1) and one sparse partition (k=7, d=2)
    auto plan = hnat::PartitionPlan::make(heads, {{7, 1}, {7, 2}});
    hnat::Rng rng(1234);
    auto params = hnat::init_hydra_params<float>(dim, plan, true, rng);

    hnat::Tensor<float> x({1, H, W, dim});
    hnat::normal_fill(x, rng, 0.0, 0.5);

    hnat::AttnCapture<float> capture;
    hnat::HydraOptions<float> opt;
    opt.capture = &capture;
    auto y = hnat::hydra_forward(x, plan, params, opt);
    std::cout << "hydra_forward: " << hnat::shape_str(x.shape()) << " -> " << hnat::shape_str(y.shape())
              << "\n";
    std::cout << "params=" << hnat::count_params(dim, plan, true)
              << " macs=" << hnat::count_macs(dim, plan, H, W, 1) << "\n";

    // check the first partition's heads against the dense masked oracle
    const auto& map = hnat::cached_index_map(H, W, plan.partitions[0].second);
    const int hc = plan.partitions[0].first;
    auto q = hnat::detail::slice_heads(capture.q, 0, hc);
    auto kt = hnat::detail::slice_heads(capture.kt, 0, hc);
    hnat::Tensor<float> v({1, static_cast<std::size_t>(hc), H, W, static_cast<std::size_t>(dim / heads)});
    hnat::normal_fill(v, rng);
    auto na = hnat::na2d_av(hnat::softmax_last(hnat::na2d_qk(q, kt, map, params.rpb[0])), v, map);
    auto dense = hnat::dense_masked_attention(hnat::scaled(q, 1.0f / params.scale), kt, v, map,
                                              params.rpb[0], params.scale);
    std::cout << "oracle gap (partition 0): " << hnat::max_abs_diff(na, dense) << "\n";

    // pooled per-head attention map of the whole layer, head 0 as PGM
    auto maps = hnat::na_attention_map(capture.q, capture.kt, 1.0, true);
    auto rasters = hnat::render_grayscale(maps);
    hnat::write_pgm("hydra_demo_head0.pgm", W, H, rasters[0]);
    std::cout << "wrote hydra_demo_head0.pgm\n";
    return 0;
}
