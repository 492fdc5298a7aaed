#pragma once

// Quality and vascular-surrogate metrics: PSNR, SSIM, confusion-based
// segmentation scores, AUC, directed Hausdorff, skeleton measures, reports.

#include "sasr/imaging.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sasr {

using BinaryMask = EdgeMap;

struct ConfusionMetrics {
    std::optional<double> sen, acc, g_mean, kappa, fdr, dice;
};

struct VesselMetrics {
    double vld = 0.0;
    std::optional<double> vt;
};

struct MetricsReport {
    std::string sample_id;
    std::optional<double> psnr_db, ssim, sen, acc, g_mean, kappa, fdr, dice, auc,
        hausdorff_px, vld, vt;
};

// 10*log10(peak^2/MSE), peak 1.0 internally; identical images cap at 99 dB.
double psnr(const ImageGray& f, const ImageGray& g);

// Mean local SSIM, same 11x11 Gaussian window as the training loss.
double ssim_metric(const ImageGray& f, const ImageGray& g);

ConfusionMetrics confusion_metrics(const BinaryMask& pred, const BinaryMask& gt);

// Rank statistic equal to the trapezoidal ROC area; ties count half.
double auc_score(const std::vector<double>& scores, const BinaryMask& gt);

using PointSet = std::vector<std::pair<int, int>>;  // (y, x)

double hausdorff_directed(const PointSet& xs, const PointSet& ys);

PointSet mask_points(const BinaryMask& m);

// Zhang-Suen iterative thinning; output subset of input; idempotent.
BinaryMask skeletonize(const BinaryMask& mask);

// VLD: centerline pixels inside the region / region area.
// VT: mean branch arc/chord ratio (branches split at junctions, < 5 px skipped).
VesselMetrics vessel_metrics(const BinaryMask& mask, const BinaryMask& region);

BinaryMask circular_region(int h, int w, double radius_fraction);

enum class ReportFormat { csv, json };

void write_report(const std::vector<MetricsReport>& reports, const std::string& path,
                  ReportFormat format);

}  // namespace sasr
