#pragma once

#include <memory>

#include "emgvit/dataset.hpp"
#include "emgvit/model.hpp"

namespace emgvit::toy {

inline constexpr int kToyT = 10;

/// Gesture g lights up channels [20g, 20g + 20) on top of white noise; on
/// Day 2 the block moves by `day2_offset` channels.
inline WindowSet::Source toy_recordings(int subjects, double noise, std::uint64_t seed, int day2_offset = 0) {
    auto recs = std::make_shared<std::vector<Recording>>();
    Rng rng(seed);
    for (int s = 1; s <= subjects; ++s)
        for (int d = 1; d <= 2; ++d)
            for (int g = 0; g < kGestures; ++g)
                for (int rep = 1; rep <= kRepetitions; ++rep) {
                    Recording r;
                    r.info = {s, g, static_cast<Day>(d), rep};
                    r.signal.resize(2 * kToyT, kChannels);
                    for (Eigen::Index i = 0; i < r.signal.size(); ++i)
                        r.signal.data()[i] = static_cast<float>(noise * rng.normal());
                    r.signal.middleCols(20 * g + (d == 2 ? day2_offset : 0), 20).array() += 1.0f;
                    recs->push_back(std::move(r));
                }
    return recs;
}

inline dsp::WindowSpec toy_windows() { return {kToyT, kToyT, 0}; }

inline ModelConfig toy_model(double dropout = 0.1) {
    ModelConfig c;
    c.window_samples = kToyT;
    c.latent_dim = 8;
    c.layers = 1;
    c.heads = 2;
    c.head_dim = 4;
    c.mlp_dim = 8;
    c.dropout_embed = dropout;
    c.dropout_encoder = dropout;
    return c;
}

}  // namespace emgvit::toy
