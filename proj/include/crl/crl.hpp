#pragma once

#include "crl/correction.hpp"
#include "crl/data.hpp"
#include "crl/experiment.hpp"
#include "crl/image_io.hpp"
#include "crl/losses.hpp"
#include "crl/metrics.hpp"
#include "crl/model.hpp"
#include "crl/morphology.hpp"
#include "crl/nn.hpp"
#include "crl/report.hpp"
#include "crl/rng.hpp"
#include "crl/selection.hpp"
#include "crl/trainer.hpp"
#include "crl/types.hpp"
