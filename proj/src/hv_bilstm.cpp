#include <cmath>
#include <stdexcept>

#include "cpc/model.hpp"

namespace cpc::model {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Token visited at step t of sequence `seq` for a direction.
std::size_t token_index(Direction dir, std::size_t g, std::size_t seq, std::size_t t) {
    switch (dir) {
        case left_to_right: return seq * g + t;
        case right_to_left: return seq * g + (g - 1 - t);
        case top_to_bottom: return t * g + seq;
        case bottom_to_top: return (g - 1 - t) * g + seq;
    }
    return 0;
}

std::size_t output_offset(Direction dir, std::size_t hidden) {
    return (dir == left_to_right || dir == top_to_bottom) ? 0 : hidden;
}

void check_shapes(const LstmWeights& lw, std::size_t width, std::size_t hidden) {
    if (lw.wx.rows() != 4 * hidden || lw.wx.cols() != width || lw.wh.rows() != 4 * hidden ||
        lw.wh.cols() != hidden || lw.b.rows() != 4 * hidden || lw.b.cols() != 1) {
        throw std::invalid_argument("hv_bilstm: LSTM weight shapes do not match token width");
    }
}

void run_pass(Direction dir, const Matrix& f_in, const LstmWeights& lw, std::size_t g, LstmTrace& tr) {
    const std::size_t s = f_in.rows();
    const std::size_t d = f_in.cols();
    const std::size_t h = d / 2;
    tr.gates = Matrix(s, 4 * h);
    tr.cell = Matrix(s, h);
    tr.tanh_cell = Matrix(s, h);
    tr.hidden = Matrix(s, h);
    std::vector<double> a(4 * h);
    for (std::size_t seq = 0; seq < g; ++seq) {
        const double* h_prev = nullptr;
        const double* c_prev = nullptr;
        for (std::size_t t = 0; t < g; ++t) {
            const std::size_t tok = token_index(dir, g, seq, t);
            auto x = f_in.row(tok);
            for (std::size_t r = 0; r < 4 * h; ++r) {
                double acc = lw.b(r, 0);
                auto wx = lw.wx.row(r);
                for (std::size_t k = 0; k < d; ++k) acc += wx[k] * x[k];
                if (h_prev) {
                    auto wh = lw.wh.row(r);
                    for (std::size_t k = 0; k < h; ++k) acc += wh[k] * h_prev[k];
                }
                a[r] = acc;
            }
            auto gates = tr.gates.row(tok);
            auto cell = tr.cell.row(tok);
            auto tc = tr.tanh_cell.row(tok);
            auto hid = tr.hidden.row(tok);
            for (std::size_t j = 0; j < h; ++j) {
                const double ig = sigmoid(a[j]);
                const double fg = sigmoid(a[h + j]);
                const double cg = std::tanh(a[2 * h + j]);
                const double og = sigmoid(a[3 * h + j]);
                gates[j] = ig;
                gates[h + j] = fg;
                gates[2 * h + j] = cg;
                gates[3 * h + j] = og;
                cell[j] = (c_prev ? fg * c_prev[j] : 0.0) + ig * cg;
                tc[j] = std::tanh(cell[j]);
                hid[j] = og * tc[j];
            }
            h_prev = hid.data();
            c_prev = cell.data();
        }
    }
}

}  // namespace

Matrix hv_bilstm_forward(const Matrix& f_in, const std::array<LstmWeights, 4>& lstm, std::size_t grid_side,
                         HvTrace* trace) {
    const std::size_t s = f_in.rows();
    const std::size_t d = f_in.cols();
    if (grid_side * grid_side != s) throw std::invalid_argument("hv_bilstm_forward: patch count is not grid_side^2");
    if (d % 2 != 0) throw std::invalid_argument("hv_bilstm_forward: token width must be even");
    const std::size_t h = d / 2;
    for (const auto& lw : lstm) check_shapes(lw, d, h);

    HvTrace local;
    HvTrace& tr = trace ? *trace : local;
    tr.grid_side = grid_side;
    tr.input = f_in;
    for (std::size_t dir = 0; dir < 4; ++dir) run_pass(static_cast<Direction>(dir), f_in, lstm[dir], grid_side, tr.passes[dir]);

    Matrix horizontal(s, d), vertical(s, d);
    for (std::size_t dir = 0; dir < 4; ++dir) {
        Matrix& dst = dir < 2 ? horizontal : vertical;
        const std::size_t off = output_offset(static_cast<Direction>(dir), h);
        for (std::size_t tok = 0; tok < s; ++tok) {
            auto hid = tr.passes[dir].hidden.row(tok);
            for (std::size_t j = 0; j < h; ++j) dst(tok, off + j) = hid[j];
        }
    }
    Matrix out(s, d);
    for (std::size_t i = 0; i < out.size(); ++i) out.flat()[i] = 0.5 * (horizontal.flat()[i] + vertical.flat()[i]);
    return out;
}

Matrix hv_bilstm_backward(const HvTrace& trace, const std::array<LstmWeights, 4>& lstm, const Matrix& d_out,
                          std::array<LstmWeights, 4>& grads) {
    const Matrix& f_in = trace.input;
    const std::size_t s = f_in.rows();
    const std::size_t d = f_in.cols();
    const std::size_t h = d / 2;
    const std::size_t g = trace.grid_side;
    if (d_out.rows() != s || d_out.cols() != d) throw std::invalid_argument("hv_bilstm_backward: gradient shape mismatch");

    Matrix d_in(s, d);
    std::vector<double> dh_next(h), dc_next(h), da(4 * h);
    for (std::size_t dir_i = 0; dir_i < 4; ++dir_i) {
        const auto dir = static_cast<Direction>(dir_i);
        const LstmWeights& lw = lstm[dir_i];
        LstmWeights& gw = grads[dir_i];
        const LstmTrace& tr = trace.passes[dir_i];
        const std::size_t off = output_offset(dir, h);
        for (std::size_t seq = 0; seq < g; ++seq) {
            std::fill(dh_next.begin(), dh_next.end(), 0.0);
            std::fill(dc_next.begin(), dc_next.end(), 0.0);
            for (std::size_t step = g; step-- > 0;) {
                const std::size_t tok = token_index(dir, g, seq, step);
                const bool has_prev = step > 0;
                const std::size_t prev = has_prev ? token_index(dir, g, seq, step - 1) : 0;
                auto gates = tr.gates.row(tok);
                auto tc = tr.tanh_cell.row(tok);
                for (std::size_t j = 0; j < h; ++j) {
                    const double ig = gates[j], fg = gates[h + j], cg = gates[2 * h + j], og = gates[3 * h + j];
                    const double dh = 0.5 * d_out(tok, off + j) + dh_next[j];
                    const double c_prev = has_prev ? tr.cell(prev, j) : 0.0;
                    const double dc = dh * og * (1.0 - tc[j] * tc[j]) + dc_next[j];
                    da[j] = dc * cg * ig * (1.0 - ig);
                    da[h + j] = dc * c_prev * fg * (1.0 - fg);
                    da[2 * h + j] = dc * ig * (1.0 - cg * cg);
                    da[3 * h + j] = dh * tc[j] * og * (1.0 - og);
                    dc_next[j] = dc * fg;
                }
                auto x = f_in.row(tok);
                auto dx = d_in.row(tok);
                std::fill(dh_next.begin(), dh_next.end(), 0.0);
                for (std::size_t r = 0; r < 4 * h; ++r) {
                    const double dar = da[r];
                    gw.b(r, 0) += dar;
                    auto gwx = gw.wx.row(r);
                    auto wx = lw.wx.row(r);
                    for (std::size_t k = 0; k < d; ++k) {
                        gwx[k] += dar * x[k];
                        dx[k] += dar * wx[k];
                    }
                    auto wh = lw.wh.row(r);
                    if (has_prev) {
                        auto hp = tr.hidden.row(prev);
                        auto gwh = gw.wh.row(r);
                        for (std::size_t k = 0; k < h; ++k) gwh[k] += dar * hp[k];
                    }
                    for (std::size_t k = 0; k < h; ++k) dh_next[k] += dar * wh[k];
                }
            }
        }
    }
    return d_in;
}

}  // namespace cpc::model
