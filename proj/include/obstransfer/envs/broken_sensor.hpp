#pragma once

#include <algorithm>
#include <set>

#include "obstransfer/common.hpp"
#include "obstransfer/envs/environment.hpp"

namespace obstransfer::envs {

// Removes `drop` features from a vector-face environment and stacks the
// last k frames, newest first. Frames before the episode start are zero.
class BrokenSensor final : public Environment {
public:
    BrokenSensor(std::unique_ptr<Environment> base, std::set<std::size_t> drop, std::size_t k)
        : base_(std::move(base)), drop_(std::move(drop)), k_(k)
    {
        if (!base_) throw std::invalid_argument("broken sensor: null base environment");
        const auto spec = base_->observation_spec();
        if (spec.is_image()) throw std::invalid_argument("broken sensor: base must have a vector face");
        base_dim_ = spec.size();
        if (k_ < 1) throw std::invalid_argument("broken sensor: stack depth must be >= 1");
        for (std::size_t f : drop_) {
            if (f >= base_dim_)
                throw std::invalid_argument("broken sensor: dropped feature " + std::to_string(f) + " out of range");
            const auto derived = base_->derived_features();
            auto it = std::find_if(derived.begin(), derived.end(), [&](const auto& d) { return d.feature == f; });
            if (it == derived.end() || drop_.count(it->source))
                throw std::invalid_argument("broken sensor: feature " + std::to_string(f) +
                                            " cannot be reconstructed from the kept features");
            if (k_ < 2)
                throw std::invalid_argument("broken sensor: dropping velocity feature " + std::to_string(f) +
                                            " needs stack depth k >= 2");
            recon_.push_back(*it);
        }
        for (std::size_t f = 0; f < base_dim_; ++f)
            if (!drop_.count(f)) kept_.push_back(f);
        if (kept_.empty()) throw std::invalid_argument("broken sensor: every feature dropped");
    }

    BrokenSensor(const BrokenSensor& o)
        : base_(o.base_->clone()), drop_(o.drop_), k_(o.k_), base_dim_(o.base_dim_), kept_(o.kept_),
          recon_(o.recon_), stack_(o.stack_), obs_(o.obs_)
    {
    }

    const Environment& base() const noexcept { return *base_; }
    std::size_t stack_depth() const noexcept { return k_; }

    Observation reset(std::uint64_t seed) override
    {
        const Observation o = base_->reset(seed);
        stack_.assign(k_ * kept_.size(), 0.0);
        push(o);
        return obs_;
    }

    Transition step(std::size_t action) override
    {
        Transition t = base_->step(action);
        t.obs = obs_;
        push(t.next_obs);
        t.next_obs = obs_;
        return t;
    }

    ObservationSpec observation_spec() const override { return {VectorSpec{k_ * kept_.size()}}; }
    std::size_t num_actions() const override { return base_->num_actions(); }
    bool done() const override { return base_->done(); }
    const Observation& current() const override { return obs_; }
    std::unique_ptr<Environment> clone() const override { return std::make_unique<BrokenSensor>(*this); }
    std::string name() const override { return base_->name() + "-broken"; }

    int decodable_after() const override { return recon_.empty() ? 0 : 1; }

    // Newest frame's kept features, dropped ones re-derived from the two
    // newest frames.
    Observation to_source_observation(const Observation& target) const override
    {
        if (!(target.spec == observation_spec()) || target.values.size() != k_ * kept_.size())
            throw std::invalid_argument("broken sensor: observation shape mismatch");
        const std::size_t n = kept_.size();
        std::vector<double> src(base_dim_, 0.0);
        auto slot = [&](std::size_t feature) {
            return static_cast<std::size_t>(std::find(kept_.begin(), kept_.end(), feature) - kept_.begin());
        };
        for (std::size_t i = 0; i < n; ++i) src[kept_[i]] = target.values[i];
        for (const auto& d : recon_) {
            const std::size_t j = slot(d.source);
            src[d.feature] = (target.values[j] - target.values[n + j]) / d.dt;
        }
        return {{VectorSpec{base_dim_}}, std::move(src)};
    }

    std::unique_ptr<Environment> source_twin() const override { return base_->clone(); }

private:
    void push(const Observation& o)
    {
        const std::size_t n = kept_.size();
        std::copy_backward(stack_.begin(), stack_.end() - static_cast<std::ptrdiff_t>(n), stack_.end());
        for (std::size_t i = 0; i < n; ++i) stack_[i] = o.values[kept_[i]];
        obs_ = {{VectorSpec{k_ * n}}, stack_};
    }

    std::unique_ptr<Environment> base_;
    std::set<std::size_t> drop_;
    std::size_t k_ = 1, base_dim_ = 0;
    std::vector<std::size_t> kept_;
    std::vector<DerivedFeature> recon_;
    std::vector<double> stack_;
    Observation obs_;
};

}  // namespace obstransfer::envs
