#pragma once

#include <algorithm>
#include <cstring>
#include <string>

#include "obstransfer/envs/environment.hpp"
#include "obstransfer/random.hpp"

namespace obstransfer::envs {

struct ValidationReport {
    std::size_t pairs = 0, failures = 0;
    std::string first_failure;
    bool passed() const { return pairs > 0 && failures == 0; }
};

inline bool bitwise_equal(const Observation& a, const Observation& b)
{
    return a.spec == b.spec && a.values.size() == b.values.size() &&
           std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) == 0;
}

// Checks f(step_T(o, a)) == step_S(f(o), a) and r_T == r_S bitwise, on
// `pairs` random (state, action) pairs. States come from random rollouts in
// the target face; the source side is the target's source twin, which holds
// the same latent state. Also checks f(o_T) == o_S before stepping.
inline ValidationReport validate_observation_map(const Environment& proto, std::size_t pairs, std::uint64_t seed,
                                                 int max_walk = 30)
{
    ValidationReport rep;
    Rng rng(seed);
    auto target = proto.clone();
    auto fail = [&](std::size_t i, const std::string& why) {
        ++rep.failures;
        if (rep.first_failure.empty()) rep.first_failure = "pair " + std::to_string(i) + ": " + why;
    };
    for (std::size_t i = 0; i < pairs; ++i) {
        // Draw a reachable, non-terminal state.
        const int walk = std::max(proto.decodable_after(),
                                  static_cast<int>(rng.index(static_cast<std::size_t>(max_walk) + 1)));
        for (;;) {
            target->reset(rng.next_u64());
            int t = 0;
            while (t < walk && !target->done()) {
                target->step(rng.index(target->num_actions()));
                ++t;
            }
            if (!target->done() && t >= target->decodable_after()) break;
        }
        ++rep.pairs;
        auto source = target->source_twin();
        if (!bitwise_equal(target->to_source_observation(target->current()), source->current())) {
            fail(i, "f(o_T) differs from the source observation");
            continue;
        }
        const std::size_t a = rng.index(target->num_actions());
        const Transition tt = target->step(a);
        const Transition ts = source->step(a);
        if (!bitwise_equal(target->to_source_observation(tt.next_obs), ts.next_obs))
            fail(i, "f(next o_T) differs from the source next observation");
        else if (std::memcmp(&tt.reward, &ts.reward, sizeof(double)) != 0)
            fail(i, "rewards differ");
        else if (tt.done != ts.done)
            fail(i, "termination differs");
    }
    return rep;
}

}  // namespace obstransfer::envs
