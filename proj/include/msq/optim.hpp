#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msq/common.hpp"
#include "msq/tensor.hpp"

namespace msq {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction over an explicit list of trainable tensors.
// Frozen parameter groups are never registered, so no state exists for them.
class Adam {
public:
    Adam(std::vector<TensorPtr> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            if (!p->requires_grad) throw ConfigError("Adam: frozen parameter registered");
            m_.emplace_back(p->data.size(), 0.0);
            v_.emplace_back(p->data.size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            for (size_t j = 0; j < p.data.size(); ++j) {
                const double g = p.grad_at(j);
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                p.data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    void zero_grad() {
        for (const auto& p : params_) p->zero_grad();
    }

    int64_t step_count() const { return t_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

    // serialized as (t, m[], v[]) in registration order
    std::vector<double> state_blob() const {
        std::vector<double> out;
        out.push_back(static_cast<double>(t_));
        for (const auto& m : m_) out.insert(out.end(), m.begin(), m.end());
        for (const auto& v : v_) out.insert(out.end(), v.begin(), v.end());
        return out;
    }

    void restore_state(const std::vector<double>& blob) {
        size_t need = 1;
        for (const auto& m : m_) need += m.size();
        for (const auto& v : v_) need += v.size();
        if (blob.size() != need) throw SchemaError("Adam: optimizer state size mismatch");
        size_t off = 0;
        t_ = static_cast<int64_t>(blob[off++]);
        for (auto& m : m_)
            for (auto& x : m) x = blob[off++];
        for (auto& v : v_)
            for (auto& x : v) x = blob[off++];
    }

private:
    std::vector<TensorPtr> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
};

// Plain SGD, available behind the optimizer config switch for debugging.
class Sgd {
public:
    Sgd(std::vector<TensorPtr> params, double lr) : params_(std::move(params)), lr_(lr) {
        for (const auto& p : params_)
            if (!p->requires_grad) throw ConfigError("Sgd: frozen parameter registered");
    }

    void step() {
        ++t_;
        for (const auto& p : params_)
            for (size_t j = 0; j < p->data.size(); ++j) p->data[j] -= lr_ * p->grad_at(j);
    }

    void zero_grad() {
        for (const auto& p : params_) p->zero_grad();
    }

    int64_t step_count() const { return t_; }
    std::vector<double> state_blob() const { return {static_cast<double>(t_)}; }
    void restore_state(const std::vector<double>& blob) {
        if (blob.size() != 1) throw SchemaError("Sgd: optimizer state size mismatch");
        t_ = static_cast<int64_t>(blob[0]);
    }

private:
    std::vector<TensorPtr> params_;
    double lr_;
    int64_t t_ = 0;
};

}  // namespace msq
