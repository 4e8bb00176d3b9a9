#pragma once

#include <cmath>

#include "obstransfer/common.hpp"
#include "obstransfer/envs/environment.hpp"
#include "obstransfer/random.hpp"

namespace obstransfer::envs {

struct CartPoleState {
    double x = 0, x_dot = 0, theta = 0, theta_dot = 0;
    int steps_taken = 0;
    bool operator==(const CartPoleState&) const = default;
};

struct CartPoleConfig {
    Face face = Face::Vector;
    int horizon = 200;
};

// Classic-control cart-pole. Actions: 0 push left, 1 push right.
//
// Integration is semi-implicit Euler, after which the stored velocities are
// re-derived as (pos_new - pos) / tau. That keeps the "velocity equals the
// finite difference of positions" identity bitwise exact, so a sensor that
// only sees stacked positions can still recover the full state.
class CartPole final : public Environment {
public:
    static constexpr double kGravity = 9.8, kMassCart = 1.0, kMassPole = 0.1, kHalfLength = 0.5;
    static constexpr double kForce = 10.0, kTau = 0.02;
    static constexpr double kXLimit = 2.4, kThetaLimit = 12.0 * 2.0 * M_PI / 360.0;
    static constexpr std::size_t kRows = 40, kCols = 90;

    explicit CartPole(CartPoleConfig cfg = {}) : cfg_(cfg)
    {
        if (cfg_.horizon < 1) throw std::invalid_argument("cartpole horizon must be >= 1");
    }

    const CartPoleState& state() const noexcept { return state_; }

    Observation reset(std::uint64_t seed) override
    {
        Rng rng(seed);
        CartPoleState s;
        s.x = rng.uniform(-0.05, 0.05);
        s.x_dot = rng.uniform(-0.05, 0.05);
        s.theta = rng.uniform(-0.05, 0.05);
        s.theta_dot = rng.uniform(-0.05, 0.05);
        set_state(s);
        return obs_;
    }

    // Starts an episode from an explicit state. The previous frame is zero.
    void set_state(const CartPoleState& s)
    {
        state_ = s;
        done_ = terminal(s);
        prev_frame_.assign(kRows * kCols, 0.0);
        obs_ = observe();
    }

    static CartPoleState dynamics(const CartPoleState& s, std::size_t action)
    {
        const double total_mass = kMassCart + kMassPole;
        const double polemass_length = kMassPole * kHalfLength;
        const double force = action == 1 ? kForce : -kForce;
        const double c = std::cos(s.theta), sn = std::sin(s.theta);
        const double temp = (force + polemass_length * s.theta_dot * s.theta_dot * sn) / total_mass;
        const double theta_acc =
            (kGravity * sn - c * temp) / (kHalfLength * (4.0 / 3.0 - kMassPole * c * c / total_mass));
        const double x_acc = temp - polemass_length * theta_acc * c / total_mass;

        CartPoleState n = s;
        n.x = s.x + kTau * (s.x_dot + kTau * x_acc);
        n.theta = s.theta + kTau * (s.theta_dot + kTau * theta_acc);
        n.x_dot = (n.x - s.x) / kTau;
        n.theta_dot = (n.theta - s.theta) / kTau;
        n.steps_taken = s.steps_taken + 1;
        return n;
    }

    bool terminal(const CartPoleState& s) const
    {
        return std::abs(s.x) > kXLimit || std::abs(s.theta) > kThetaLimit || s.steps_taken >= cfg_.horizon;
    }

    Transition step(std::size_t action) override
    {
        if (done_) throw StateError("cartpole: step after episode end");
        if (action >= 2) throw std::invalid_argument("cartpole: action out of range");
        Transition t;
        t.obs = obs_;
        t.action = action;
        state_ = dynamics(state_, action);
        t.reward = 1.0;
        done_ = terminal(state_);
        obs_ = observe();
        t.next_obs = obs_;
        t.done = done_;
        return t;
    }

    ObservationSpec observation_spec() const override
    {
        if (cfg_.face == Face::Vector) return {VectorSpec{4}};
        return {ImageSpec{kRows, kCols, 1, true}};
    }
    std::size_t num_actions() const override { return 2; }
    bool done() const override { return done_; }
    const Observation& current() const override { return obs_; }
    std::unique_ptr<Environment> clone() const override { return std::make_unique<CartPole>(*this); }
    std::string name() const override { return cfg_.face == Face::Vector ? "cartpole-vec" : "cartpole-pixel"; }

    std::vector<DerivedFeature> derived_features() const override
    {
        if (cfg_.face != Face::Vector) return {};
        return {{1, 0, kTau}, {3, 2, kTau}};
    }

    static Observation vector_obs(const CartPoleState& s) { return {{VectorSpec{4}}, {s.x, s.x_dot, s.theta, s.theta_dot}}; }

    // Binary 40x90 frame centered on the cart. Each pixel covers 0.032 m;
    // the top row sits 0.64 m above the track and the bottom row 0.64 m below.
    // Pixels beyond the track limits stay empty so absolute position leaks
    // in near the edges, as with a cropped screen.
    static std::vector<double> render_frame(const CartPoleState& s)
    {
        constexpr double px = 0.032;
        constexpr double cart_half_w = 0.2, cart_half_h = 0.12, axle = 0.06;
        constexpr double pole_len = 2.0 * kHalfLength, pole_half_w = 0.04;
        const double sn = std::sin(s.theta), c = std::cos(s.theta);
        std::vector<double> f(kRows * kCols, 0.0);
        for (std::size_t r = 0; r < kRows; ++r) {
            const double h = 0.64 - (static_cast<double>(r) + 0.5) * px;
            for (std::size_t col = 0; col < kCols; ++col) {
                const double dx = (static_cast<double>(col) + 0.5 - kCols / 2.0) * px;
                if (std::abs(s.x + dx) > kXLimit) continue;
                bool on = std::abs(dx) <= cart_half_w && std::abs(h) <= cart_half_h;
                if (!on) {
                    // Pole axis points along (sin theta, cos theta) from the axle.
                    const double px_ = dx, py = h - axle;
                    const double along = px_ * sn + py * c;
                    const double across = px_ * c - py * sn;
                    on = along >= 0.0 && along <= pole_len && std::abs(across) <= pole_half_w;
                }
                if (!on) on = std::abs(h + cart_half_h) < px / 2.0;  // track line under the cart
                if (on) f[r * kCols + col] = 1.0;
            }
        }
        return f;
    }

    Observation to_source_observation(const Observation& target) const override
    {
        if (target.spec == ObservationSpec{VectorSpec{4}}) return target;
        throw std::invalid_argument("cartpole: difference images do not determine the state exactly");
    }

    std::unique_ptr<Environment> source_twin() const override
    {
        auto twin = std::make_unique<CartPole>(*this);
        twin->cfg_.face = Face::Vector;
        twin->obs_ = vector_obs(state_);
        return twin;
    }

private:
    Observation observe()
    {
        if (cfg_.face == Face::Vector) return vector_obs(state_);
        auto frame = render_frame(state_);
        Observation o{{ImageSpec{kRows, kCols, 1, true}}, frame};
        for (std::size_t i = 0; i < frame.size(); ++i) o.values[i] -= prev_frame_[i];
        prev_frame_ = std::move(frame);
        return o;
    }

    CartPoleConfig cfg_;
    CartPoleState state_;
    bool done_ = true;
    std::vector<double> prev_frame_ = std::vector<double>(kRows * kCols, 0.0);
    Observation obs_;
};

}  // namespace obstransfer::envs
