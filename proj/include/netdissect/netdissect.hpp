#pragma once
// Umbrella header.

#include "netdissect/concept_store.hpp"
#include "netdissect/dataset.hpp"
#include "netdissect/error.hpp"
#include "netdissect/quantile.hpp"
#include "netdissect/report.hpp"
#include "netdissect/rotation.hpp"
#include "netdissect/scoring.hpp"
#include "netdissect/synth.hpp"
#include "netdissect/tensor_io.hpp"
#include "netdissect/upsample.hpp"
