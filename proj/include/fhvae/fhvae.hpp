#pragma once

#include "fhvae/checkpoint.hpp"
#include "fhvae/config.hpp"
#include "fhvae/data.hpp"
#include "fhvae/error.hpp"
#include "fhvae/eval.hpp"
#include "fhvae/extraction.hpp"
#include "fhvae/gaussian.hpp"
#include "fhvae/model.hpp"
#include "fhvae/nn.hpp"
#include "fhvae/objective.hpp"
#include "fhvae/trainer.hpp"
