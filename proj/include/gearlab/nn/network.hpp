#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gearlab/core.hpp"
#include "gearlab/nn/kernels.hpp"
#include "gearlab/nn/tensor.hpp"

namespace gearlab::nn {

enum class LayerKind { conv, dense };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    int out = 0;
    int kernel = 1;
    int stride = 1;
    bool relu = true;
};

// Input is [channels, height, width]; a dense layer flattens whatever it
// receives. The last layer never applies an activation.
struct NetSpec {
    int in_c = 3, in_h = 64, in_w = 64;
    std::vector<LayerSpec> layers;

    // conv 8@5x5/2 -> conv 16@3x3/2 -> conv 32@3x3/2 -> dense 128 -> dense head
    static NetSpec policy_cnn(int head, int hidden = 128);
    int input_size() const { return in_c * in_h * in_w; }
    int output_size() const;
    std::string describe() const;
    static NetSpec parse(const std::string& text);
    bool operator==(const NetSpec& o) const { return describe() == o.describe(); }
};

template <class T>
class Network {
public:
    explicit Network(NetSpec spec);

    const NetSpec& spec() const { return spec_; }
    std::size_t num_params() const { return params_.size(); }
    std::vector<T>& params() { return params_; }
    const std::vector<T>& params() const { return params_; }
    std::vector<T>& grads() { return grads_; }
    const std::vector<T>& grads() const { return grads_; }
    // Offsets of layer l's weights and bias inside params().
    std::size_t weight_offset(int l) const { return layers_[l].w_off; }
    std::size_t bias_offset(int l) const { return layers_[l].b_off; }
    std::size_t weight_count(int l) const { return layers_[l].b_off - layers_[l].w_off; }
    int num_layers() const { return static_cast<int>(layers_.size()); }
    std::string layer_name(int l) const;

    // Variance-scaling fan-in init: normal with std sqrt(2/fan_in) for ReLU
    // layers, sqrt(1/fan_in) for the output layer; zero biases.
    void init(Rng& rng);

    // Batched forward over [batch, in_c, in_h, in_w]. The returned pointer
    // stays valid until the next forward. Caches activations for backward.
    const T* forward(const T* input, int batch);
    Tensor<T> forward(const Tensor<T>& input);
    // Accumulates parameter gradients for the cached batch. Throws
    // std::logic_error if no forward pass is cached.
    void backward(const T* output_grad);
    void zero_grad();
    void clear_cache() { cached_batch_ = 0; }

    // Run the serial reference kernels instead of the parallel ones.
    void use_reference_kernels(bool on) { reference_ = on; }

private:
    struct Layer {
        LayerSpec spec;
        ConvGeom geom;  // conv only
        int in_size = 0, out_size = 0;
        std::size_t w_off = 0, b_off = 0;
    };

    NetSpec spec_;
    std::vector<Layer> layers_;
    std::vector<T> params_, grads_;
    std::vector<std::vector<T>> acts_;  // acts_[0] is the input, acts_[l+1] layer l output
    std::vector<T> dcur_, dnext_;
    int cached_batch_ = 0;
    bool reference_ = false;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace gearlab::nn
