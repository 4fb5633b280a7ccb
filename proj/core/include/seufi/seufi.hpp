#pragma once

#include "seufi/campaign.hpp"
#include "seufi/campaign_io.hpp"
#include "seufi/compression.hpp"
#include "seufi/error.hpp"
#include "seufi/error_model.hpp"
#include "seufi/fault_space.hpp"
#include "seufi/injector.hpp"
#include "seufi/kernels.hpp"
#include "seufi/model.hpp"
#include "seufi/model_io.hpp"
#include "seufi/random.hpp"
#include "seufi/tensor.hpp"
#include "seufi/version.hpp"
#include "seufi/zoo.hpp"
