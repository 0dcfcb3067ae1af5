#include "gearlab/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace gearlab::nn {

NetSpec NetSpec::policy_cnn(int head, int hidden) {
    NetSpec s;
    s.layers = {
        {LayerKind::conv, 8, 5, 2, true},
        {LayerKind::conv, 16, 3, 2, true},
        {LayerKind::conv, 32, 3, 2, true},
        {LayerKind::dense, hidden, 1, 1, true},
        {LayerKind::dense, head, 1, 1, false},
    };
    return s;
}

int NetSpec::output_size() const {
    if (layers.empty()) return input_size();
    return layers.back().out;
}

std::string NetSpec::describe() const {
    std::ostringstream os;
    os << "in=" << in_c << 'x' << in_h << 'x' << in_w;
    for (const auto& l : layers) {
        if (l.kind == LayerKind::conv)
            os << ";conv" << l.out << 'k' << l.kernel << 's' << l.stride;
        else
            os << ";dense" << l.out;
        if (l.relu) os << 'r';
    }
    return os.str();
}

NetSpec NetSpec::parse(const std::string& text) {
    static const std::regex in_re(R"(in=(\d+)x(\d+)x(\d+))");
    static const std::regex conv_re(R"(conv(\d+)k(\d+)s(\d+)(r?))");
    static const std::regex dense_re(R"(dense(\d+)(r?))");
    NetSpec s;
    s.layers.clear();
    std::istringstream is(text);
    std::string tok;
    bool first = true;
    std::smatch m;
    while (std::getline(is, tok, ';')) {
        if (first) {
            if (!std::regex_match(tok, m, in_re)) throw std::invalid_argument("bad net spec input: " + tok);
            s.in_c = std::stoi(m[1]);
            s.in_h = std::stoi(m[2]);
            s.in_w = std::stoi(m[3]);
            first = false;
        } else if (std::regex_match(tok, m, conv_re)) {
            s.layers.push_back({LayerKind::conv, std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3]), m[4] == "r"});
        } else if (std::regex_match(tok, m, dense_re)) {
            s.layers.push_back({LayerKind::dense, std::stoi(m[1]), 1, 1, m[2] == "r"});
        } else {
            throw std::invalid_argument("bad net spec layer: " + tok);
        }
    }
    if (first) throw std::invalid_argument("empty net spec");
    return s;
}

template <class T>
Network<T>::Network(NetSpec spec) : spec_(std::move(spec)) {
    int c = spec_.in_c, h = spec_.in_h, w = spec_.in_w;
    if (c <= 0 || h <= 0 || w <= 0) throw std::invalid_argument("network input dimensions must be positive");
    std::size_t off = 0;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        Layer L;
        L.spec = spec_.layers[i];
        if (i + 1 == spec_.layers.size()) L.spec.relu = false;
        if (L.spec.out <= 0) throw std::invalid_argument("layer " + std::to_string(i) + ": output size must be positive");
        L.in_size = c * h * w;
        L.w_off = off;
        if (L.spec.kind == LayerKind::conv) {
            L.geom = {c, h, w, L.spec.out, L.spec.kernel, L.spec.stride};
            if (L.spec.kernel <= 0 || L.spec.stride <= 0 || L.spec.kernel > h || L.spec.kernel > w)
                throw std::invalid_argument("layer " + std::to_string(i) + ": kernel does not fit " +
                                            std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w));
            off += static_cast<std::size_t>(L.geom.weight_size());
            c = L.spec.out;
            h = L.geom.out_h();
            w = L.geom.out_w();
        } else {
            off += static_cast<std::size_t>(L.in_size) * L.spec.out;
            c = L.spec.out;
            h = w = 1;
        }
        L.b_off = off;
        off += static_cast<std::size_t>(L.spec.out);
        L.out_size = c * h * w;
        layers_.push_back(L);
    }
    spec_.layers.clear();
    for (const auto& L : layers_) spec_.layers.push_back(L.spec);
    params_.assign(off, T(0));
    grads_.assign(off, T(0));
    acts_.resize(layers_.size() + 1);
}

template <class T>
std::string Network<T>::layer_name(int l) const {
    const LayerSpec& s = layers_.at(l).spec;
    std::ostringstream os;
    os << "layer " << l << " (";
    if (s.kind == LayerKind::conv)
        os << "conv " << s.out << '@' << s.kernel << 'x' << s.kernel << '/' << s.stride;
    else
        os << "dense " << s.out;
    os << ')';
    return os.str();
}

template <class T>
void Network<T>::init(Rng& rng) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& L = layers_[l];
        const int fan_in = L.spec.kind == LayerKind::conv ? L.geom.col_rows() : L.in_size;
        const double stdev = std::sqrt((L.spec.relu ? 2.0 : 1.0) / fan_in);
        for (std::size_t i = L.w_off; i < L.b_off; ++i) params_[i] = static_cast<T>(stdev * rng.normal());
        std::fill(params_.begin() + static_cast<std::ptrdiff_t>(L.b_off),
                  params_.begin() + static_cast<std::ptrdiff_t>(L.b_off + L.spec.out), T(0));
    }
}

namespace {

template <class T>
void check_finite(const T* p, std::size_t n, const std::string& what) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) throw NonFiniteError("non-finite value in " + what);
}

}  // namespace

template <class T>
const T* Network<T>::forward(const T* input, int batch) {
    if (batch <= 0) throw std::invalid_argument("forward: batch must be positive");
    const std::size_t in_n = static_cast<std::size_t>(batch) * spec_.input_size();
    acts_[0].assign(input, input + in_n);
    check_finite(acts_[0].data(), in_n, "network input");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& L = layers_[l];
        auto& out = acts_[l + 1];
        out.resize(static_cast<std::size_t>(batch) * L.out_size);
        const T* x = acts_[l].data();
        const T* w = params_.data() + L.w_off;
        const T* b = params_.data() + L.b_off;
        if (L.spec.kind == LayerKind::conv) {
            if (reference_)
                reference::conv2d_forward(L.geom, batch, x, w, b, out.data());
            else
                parallel::conv2d_forward(L.geom, batch, x, w, b, out.data());
        } else {
            if (reference_)
                reference::dense_forward(batch, L.in_size, L.spec.out, x, w, b, out.data());
            else
                parallel::dense_forward(batch, L.in_size, L.spec.out, x, w, b, out.data());
        }
        if (L.spec.relu)
            for (auto& v : out) v = v > T(0) ? v : T(0);
        check_finite(out.data(), out.size(), "output of " + layer_name(static_cast<int>(l)));
    }
    cached_batch_ = batch;
    return acts_.back().data();
}

template <class T>
Tensor<T> Network<T>::forward(const Tensor<T>& input) {
    const auto& s = input.shape;
    int batch = 0;
    if (s.size() == 3 && s[0] == spec_.in_c && s[1] == spec_.in_h && s[2] == spec_.in_w)
        batch = 1;
    else if (s.size() == 4 && s[1] == spec_.in_c && s[2] == spec_.in_h && s[3] == spec_.in_w)
        batch = s[0];
    if (batch <= 0) {
        std::string msg = "input shape " + input.shape_str() + " does not match ";
        msg += layers_.empty() ? std::string("network input") : layer_name(0);
        msg += " expecting " + std::to_string(spec_.in_c) + "x" + std::to_string(spec_.in_h) + "x" +
               std::to_string(spec_.in_w);
        throw std::invalid_argument(msg);
    }
    const T* y = forward(input.data.data(), batch);
    const int n_out = spec_.output_size();
    Tensor<T> out(s.size() == 3 ? std::vector<int>{n_out} : std::vector<int>{batch, n_out});
    std::copy(y, y + static_cast<std::ptrdiff_t>(batch) * n_out, out.data.begin());
    return out;
}

template <class T>
void Network<T>::backward(const T* output_grad) {
    if (cached_batch_ == 0) throw std::logic_error("backward called without a cached forward pass");
    const int batch = cached_batch_;
    if (layers_.empty()) return;
    dcur_.assign(output_grad, output_grad + static_cast<std::ptrdiff_t>(batch) * layers_.back().out_size);
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
        const Layer& L = layers_[l];
        if (L.spec.relu) {
            const auto& y = acts_[l + 1];
            for (std::size_t i = 0; i < dcur_.size(); ++i)
                if (!(y[i] > T(0))) dcur_[i] = T(0);
        }
        const T* x = acts_[l].data();
        const T* w = params_.data() + L.w_off;
        T* dw = grads_.data() + L.w_off;
        T* db = grads_.data() + L.b_off;
        const bool need_dx = l > 0;
        if (need_dx) dnext_.resize(static_cast<std::size_t>(batch) * L.in_size);
        if (L.spec.kind == LayerKind::conv) {
            if (reference_) {
                reference::conv2d_backward_weight(L.geom, batch, x, dcur_.data(), dw, db);
                if (need_dx) reference::conv2d_backward_input(L.geom, batch, dcur_.data(), w, dnext_.data());
            } else {
                parallel::conv2d_backward_weight(L.geom, batch, x, dcur_.data(), dw, db);
                if (need_dx) parallel::conv2d_backward_input(L.geom, batch, dcur_.data(), w, dnext_.data());
            }
        } else {
            if (reference_) {
                reference::dense_backward_weight(batch, L.in_size, L.spec.out, x, dcur_.data(), dw, db);
                if (need_dx) reference::dense_backward_input(batch, L.in_size, L.spec.out, dcur_.data(), w, dnext_.data());
            } else {
                parallel::dense_backward_weight(batch, L.in_size, L.spec.out, x, dcur_.data(), dw, db);
                if (need_dx) parallel::dense_backward_input(batch, L.in_size, L.spec.out, dcur_.data(), w, dnext_.data());
            }
        }
        if (need_dx) dcur_.swap(dnext_);
    }
    check_finite(grads_.data(), grads_.size(), "parameter gradients");
}

template <class T>
void Network<T>::zero_grad() {
    std::fill(grads_.begin(), grads_.end(), T(0));
}

template class Network<float>;
template class Network<double>;

}  // namespace gearlab::nn
