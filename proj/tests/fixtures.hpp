#pragma once

// Shared setups for the trainer tests and the acceptance runner.

#include <vector>

#include "cervinet/phantom.hpp"
#include "cervinet/trainer.hpp"

namespace fixture {

// Two preterm and two control phantoms at 64 px.
inline std::vector<cervinet::Sample> probe_batch() {
    cervinet::PhantomSpec spec;
    spec.image_size = 64;
    spec.preterm_fraction = 0.5;
    spec.seed = 5;
    std::vector<cervinet::Sample> batch;
    int pos = 0, neg = 0;
    for (int i = 0; batch.size() < 4; ++i) {
        cervinet::Sample s = cervinet::generate_sample(spec, i).sample;
        int& count = s.label == 1 ? pos : neg;
        if (count < 2) {
            ++count;
            batch.push_back(std::move(s));
        }
    }
    return batch;
}

// Desk network; a single fixed batch tolerates a large step and no decay.
inline cervinet::TrainConfig probe_config() {
    cervinet::TrainConfig c;
    c.network = cervinet::NetworkConfig::desk();
    c.learning_rate = 1e-2;
    c.weight_decay = 0.0;
    return c;
}

// Very small network for fast end-to-end runs.
inline cervinet::TrainConfig tiny_config(int epochs) {
    cervinet::TrainConfig c;
    c.epochs = epochs;
    c.network.depth = 2;
    c.network.base_channels = 4;
    c.network.fc_widths = {8};
    c.network.input_size = 32;
    c.learning_rate = 1e-3;
    return c;
}

inline std::vector<cervinet::Sample> phantoms(int n, std::uint64_t seed, double preterm_fraction = 0.3, int size = 32) {
    cervinet::PhantomSpec spec;
    spec.image_size = size;
    spec.preterm_fraction = preterm_fraction;
    spec.seed = seed;
    std::vector<cervinet::Sample> out;
    for (int i = 0; i < n; ++i) out.push_back(cervinet::generate_sample(spec, i).sample);
    return out;
}

}  // namespace fixture
