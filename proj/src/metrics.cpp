#include "tempofuse/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace tempofuse {

Mask validity_mask(const Map& d_gt, const Map& scene_flow) {
    const bool use_flow = !scene_flow.empty();
    if (use_flow) require_same_shape(d_gt, scene_flow, "validity_mask");
    Mask out(d_gt.height(), d_gt.width());
    for (int r = 0; r < d_gt.height(); ++r)
        for (int c = 0; c < d_gt.width(); ++c) {
            const double d = d_gt(r, c);
            bool ok = d >= kMinValidDisparity && d <= kMaxValidDisparity;
            if (ok && use_flow) {
                double sq = 0;
                for (int k = 0; k < scene_flow.channels(); ++k) sq += scene_flow(r, c, k) * scene_flow(r, c, k);
                ok = std::sqrt(sq) <= kMaxSceneFlow;
            }
            out(r, c) = ok ? 1 : 0;
        }
    return out;
}

std::vector<TracedPair> trace(const Map& flow_gt, const Map& d_pred_prev, const Map& d_pred_curr,
                              const Map& d_gt_prev, const Map& d_gt_curr, const Mask& valid_prev,
                              const Mask& valid_curr) {
    require_same_shape(flow_gt, d_pred_prev, "trace");
    require_same_shape(flow_gt, d_pred_curr, "trace");
    require_same_shape(flow_gt, d_gt_prev, "trace");
    require_same_shape(flow_gt, d_gt_curr, "trace");
    if (flow_gt.channels() < 2) throw DimensionMismatch("trace: flow needs 2 channels");
    if (!valid_prev.empty()) require_same_shape(flow_gt, valid_prev, "trace");
    if (!valid_curr.empty()) require_same_shape(flow_gt, valid_curr, "trace");

    std::vector<TracedPair> pairs;
    for (int r = 0; r < flow_gt.height(); ++r)
        for (int c = 0; c < flow_gt.width(); ++c) {
            if (!valid_prev.empty() && !valid_prev(r, c)) continue;
            TracedPair p;
            p.u = c;
            p.v = r;
            p.u_next = c + flow_gt(r, c, 0);
            p.v_next = r + flow_gt(r, c, 1);
            if (!valid_curr.empty() && !mask_bilinear_all(valid_curr, p.u_next, p.v_next)) continue;
            if (!sample_bilinear(d_pred_curr, p.u_next, p.v_next, 0, p.d_pred_curr)) continue;
            sample_bilinear(d_gt_curr, p.u_next, p.v_next, 0, p.d_gt_curr);
            p.d_pred_prev = d_pred_prev(r, c);
            p.d_gt_prev = d_gt_prev(r, c);
            pairs.push_back(p);
        }
    return pairs;
}

TemporalMetrics tepe(const std::vector<TracedPair>& pairs) {
    if (pairs.empty()) throw EmptyPairSet("tepe: no traced pairs");
    TemporalMetrics m;
    for (const auto& p : pairs) {
        const double err = std::abs(p.delta() - p.delta_gt());
        const double rel = err / (std::abs(p.delta_gt()) + kTepeEpsilon);
        m.tepe += err;
        m.tepe_r += rel;
        m.tepe_3px += err > 3.0 ? 1.0 : 0.0;
        m.tepe_r_100pct += rel > 1.0 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(pairs.size());
    m.tepe /= n;
    m.tepe_r /= n;
    m.tepe_3px /= n;
    m.tepe_r_100pct /= n;
    m.count = static_cast<long>(pairs.size());
    return m;
}

DisparityMetrics epe(const Map& d_pred, const Map& d_gt, const Mask& mask) {
    require_same_shape(d_pred, d_gt, "epe");
    if (!mask.empty()) require_same_shape(d_pred, mask, "epe");
    DisparityMetrics m;
    for (int r = 0; r < d_pred.height(); ++r)
        for (int c = 0; c < d_pred.width(); ++c) {
            if (!mask.empty() && !mask(r, c)) continue;
            const double e = std::abs(d_pred(r, c) - d_gt(r, c));
            m.epe += e;
            m.d3px += e > 3.0 ? 1.0 : 0.0;
            ++m.count;
        }
    if (m.count == 0) throw EmptyMask("epe: mask selects no pixels");
    m.epe /= static_cast<double>(m.count);
    m.d3px /= static_cast<double>(m.count);
    return m;
}

FlowMetrics fepe(const Map& flow_pred, const Map& flow_gt, const Mask& mask, FlowKind kind) {
    require_same_shape(flow_pred, flow_gt, "fepe");
    if (!mask.empty()) require_same_shape(flow_pred, mask, "fepe");
    const int nc = kind == FlowKind::Optical ? 2 : 3;
    if (flow_pred.channels() < nc || flow_gt.channels() < nc)
        throw DimensionMismatch("fepe: flow has too few channels");
    FlowMetrics m;
    for (int r = 0; r < flow_pred.height(); ++r)
        for (int c = 0; c < flow_pred.width(); ++c) {
            if (!mask.empty() && !mask(r, c)) continue;
            double sq = 0;
            for (int k = 0; k < nc; ++k) {
                const double d = flow_pred(r, c, k) - flow_gt(r, c, k);
                sq += d * d;
            }
            const double e = std::sqrt(sq);
            m.fepe += e;
            m.d1px += e > 1.0 ? 1.0 : 0.0;
            ++m.count;
        }
    if (m.count == 0) throw EmptyMask("fepe: mask selects no pixels");
    m.fepe /= static_cast<double>(m.count);
    m.d1px /= static_cast<double>(m.count);
    return m;
}

FlowMetrics fepe_scene_px(const Map& flow_pred_m, const Map& flow_gt_m, const Map& depth, double fx,
                          const Mask& mask) {
    require_same_shape(flow_pred_m, flow_gt_m, "fepe_scene_px");
    require_same_shape(flow_pred_m, depth, "fepe_scene_px");
    if (!mask.empty()) require_same_shape(flow_pred_m, mask, "fepe_scene_px");
    FlowMetrics m;
    for (int r = 0; r < depth.height(); ++r)
        for (int c = 0; c < depth.width(); ++c) {
            if (!mask.empty() && !mask(r, c)) continue;
            if (!(depth(r, c) > 0)) continue;
            double sq = 0;
            for (int k = 0; k < 3; ++k) {
                const double d = flow_pred_m(r, c, k) - flow_gt_m(r, c, k);
                sq += d * d;
            }
            const double e = std::sqrt(sq) * fx / depth(r, c);
            m.fepe += e;
            m.d1px += e > 1.0 ? 1.0 : 0.0;
            ++m.count;
        }
    if (m.count == 0) throw EmptyMask("fepe_scene_px: mask selects no pixels");
    m.fepe /= static_cast<double>(m.count);
    m.d1px /= static_cast<double>(m.count);
    return m;
}

void MetricReport::set_temporal(const TemporalMetrics& m) {
    tepe = m.tepe;
    tepe_3px = m.tepe_3px;
    tepe_r = m.tepe_r;
    tepe_r_100pct = m.tepe_r_100pct;
    temporal_count = m.count;
}

void MetricReport::set_disparity(const DisparityMetrics& m) {
    epe = m.epe;
    d3px = m.d3px;
    pixel_count = m.count;
}

void MetricReport::set_optical_flow(const FlowMetrics& m) {
    fepe_of = m.fepe;
    fepe_of_1px = m.d1px;
    flow_count = m.count;
}

void MetricReport::set_scene_flow(const FlowMetrics& metres, const FlowMetrics& pixels) {
    fepe_sf = metres.fepe;
    fepe_sf_1px = metres.d1px;
    fepe_sf_px = pixels.fepe;
    fepe_sf_px_1px = pixels.d1px;
}

MetricReport aggregate(const std::vector<MetricReport>& reports) {
    MetricReport out;
    double wt = 0, wp = 0, wf = 0;
    for (const auto& r : reports) {
        const double t = static_cast<double>(r.temporal_count);
        const double p = static_cast<double>(r.pixel_count);
        const double f = static_cast<double>(r.flow_count);
        out.tepe += t * r.tepe;
        out.tepe_3px += t * r.tepe_3px;
        out.tepe_r += t * r.tepe_r;
        out.tepe_r_100pct += t * r.tepe_r_100pct;
        out.epe += p * r.epe;
        out.d3px += p * r.d3px;
        out.fepe_of += f * r.fepe_of;
        out.fepe_of_1px += f * r.fepe_of_1px;
        out.fepe_sf += f * r.fepe_sf;
        out.fepe_sf_1px += f * r.fepe_sf_1px;
        out.fepe_sf_px += f * r.fepe_sf_px;
        out.fepe_sf_px_1px += f * r.fepe_sf_px_1px;
        wt += t;
        wp += p;
        wf += f;
        if (r.frames.empty()) {
            MetricReport flat = r;
            out.frames.push_back(flat);
        } else {
            out.frames.insert(out.frames.end(), r.frames.begin(), r.frames.end());
        }
    }
    auto norm = [](double& v, double w) { v = w > 0 ? v / w : 0.0; };
    norm(out.tepe, wt);
    norm(out.tepe_3px, wt);
    norm(out.tepe_r, wt);
    norm(out.tepe_r_100pct, wt);
    norm(out.epe, wp);
    norm(out.d3px, wp);
    norm(out.fepe_of, wf);
    norm(out.fepe_of_1px, wf);
    norm(out.fepe_sf, wf);
    norm(out.fepe_sf_1px, wf);
    norm(out.fepe_sf_px, wf);
    norm(out.fepe_sf_px_1px, wf);
    out.temporal_count = static_cast<long>(wt);
    out.pixel_count = static_cast<long>(wp);
    out.flow_count = static_cast<long>(wf);
    return out;
}

namespace {

nlohmann::ordered_json report_json(const MetricReport& r, bool include_frames) {
    nlohmann::ordered_json j;
    j["tepe"] = r.tepe;
    j["tepe_3px"] = r.tepe_3px;
    j["tepe_r"] = r.tepe_r;
    j["tepe_r_100pct"] = r.tepe_r_100pct;
    j["epe"] = r.epe;
    j["d3px"] = r.d3px;
    j["fepe_of"] = r.fepe_of;
    j["fepe_of_1px"] = r.fepe_of_1px;
    j["fepe_sf_m"] = r.fepe_sf;
    j["fepe_sf_m_1px"] = r.fepe_sf_1px;
    j["fepe_sf_px"] = r.fepe_sf_px;
    j["fepe_sf_px_1px"] = r.fepe_sf_px_1px;
    j["temporal_count"] = r.temporal_count;
    j["pixel_count"] = r.pixel_count;
    j["flow_count"] = r.flow_count;
    if (include_frames) {
        auto frames = nlohmann::ordered_json::array();
        for (const auto& f : r.frames) frames.push_back(report_json(f, false));
        j["frames"] = frames;
    }
    return j;
}

}  // namespace

std::string report_to_json(const MetricReport& report, bool include_frames) {
    return report_json(report, include_frames).dump(2);
}

std::string report_csv_header() {
    return "method,sequence,tepe,tepe_3px,tepe_r,tepe_r_100pct,epe,d3px,fepe_of,fepe_of_1px,fepe_sf_m,"
           "fepe_sf_m_1px,fepe_sf_px,fepe_sf_px_1px,temporal_count,pixel_count,flow_count";
}

std::string report_csv_row(const std::string& method, const std::string& sequence, const MetricReport& r) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << method << ',' << sequence << ',' << r.tepe << ',' << r.tepe_3px << ',' << r.tepe_r << ','
       << r.tepe_r_100pct << ',' << r.epe << ',' << r.d3px << ',' << r.fepe_of << ',' << r.fepe_of_1px << ','
       << r.fepe_sf << ',' << r.fepe_sf_1px << ',' << r.fepe_sf_px << ',' << r.fepe_sf_px_1px << ','
       << r.temporal_count << ',' << r.pixel_count << ',' << r.flow_count;
    return os.str();
}

}  // namespace tempofuse
