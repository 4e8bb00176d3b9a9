#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "obstransfer/nn/tensor.hpp"

namespace obstransfer::envs {

enum class Face { Vector, Pixel };

struct VectorSpec {
    std::size_t dim = 0;
    bool operator==(const VectorSpec&) const = default;
};

// Channel-major (C, H, W) image. Difference images hold values in [-1, 1],
// plain renderings in [0, 1].
struct ImageSpec {
    std::size_t height = 0, width = 0, channels = 0;
    bool difference = false;
    bool operator==(const ImageSpec&) const = default;
};

struct ObservationSpec {
    std::variant<VectorSpec, ImageSpec> kind;

    bool operator==(const ObservationSpec&) const = default;

    bool is_image() const { return std::holds_alternative<ImageSpec>(kind); }

    std::size_t size() const
    {
        if (const auto* v = std::get_if<VectorSpec>(&kind)) return v->dim;
        const auto& im = std::get<ImageSpec>(kind);
        return im.height * im.width * im.channels;
    }

    // Per-sample network input shape.
    nn::Shape shape() const
    {
        if (const auto* v = std::get_if<VectorSpec>(&kind)) return {v->dim};
        const auto& im = std::get<ImageSpec>(kind);
        return {im.channels, im.height, im.width};
    }

    void validate() const
    {
        if (const auto* v = std::get_if<VectorSpec>(&kind)) {
            if (v->dim < 1) throw std::invalid_argument("vector observation needs dim >= 1");
        } else {
            const auto& im = std::get<ImageSpec>(kind);
            if (im.height < 1 || im.width < 1 || im.channels < 1)
                throw std::invalid_argument("image observation needs height, width, channels >= 1");
        }
    }
};

struct Observation {
    ObservationSpec spec;
    std::vector<double> values;

    bool operator==(const Observation&) const = default;
};

struct Transition {
    Observation obs;
    std::size_t action = 0;
    double reward = 0.0;
    Observation next_obs;
    bool done = false;
};

// A deterministic-dynamics episodic environment exposing one observation face.
class Environment {
public:
    virtual ~Environment() = default;

    virtual Observation reset(std::uint64_t seed) = 0;

    // Throws StateError when called after the episode has ended.
    virtual Transition step(std::size_t action) = 0;

    virtual ObservationSpec observation_spec() const = 0;
    virtual std::size_t num_actions() const = 0;
    virtual bool done() const = 0;
    virtual const Observation& current() const = 0;
    virtual std::unique_ptr<Environment> clone() const = 0;
    virtual std::string name() const = 0;

    // The inter-task map f: decodes an observation of this face into the
    // source (vector) observation of the same latent state. Test oracle only.
    virtual Observation to_source_observation(const Observation& target) const
    {
        (void)target;
        throw std::invalid_argument(name() + ": no decodable source face");
    }

    // An environment in the source face sharing this one's latent state.
    virtual std::unique_ptr<Environment> source_twin() const
    {
        throw std::invalid_argument(name() + ": no source face");
    }

    // Steps into an episode before to_source_observation is exact.
    virtual int decodable_after() const { return 0; }

    // Vector features that are finite differences of another feature:
    // value[feature] == (pos_t - pos_{t-1}) / dt where pos = value[source].
    struct DerivedFeature {
        std::size_t feature, source;
        double dt;
    };
    virtual std::vector<DerivedFeature> derived_features() const { return {}; }
};

}  // namespace obstransfer::envs
