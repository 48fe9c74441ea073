//! Python bindings for the latentnet recommender.

use std::path::PathBuf;

use latentnet_core as core;
use latentnet_core::{ColdStartConfig, Error, ItemProfiles, Rating, RatingScale, SparseRatings, VariantKind};
use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::IndexOutOfRange { .. } => PyIndexError::new_err(err.to_string()),
        Error::Parse { .. }
        | Error::DuplicateRating { .. }
        | Error::InvalidRating { .. }
        | Error::Config(_)
        | Error::EmptyInput(_)
        | Error::Shape(_)
        | Error::ModelFormat { .. } => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn scale_from(scale: Option<(f64, f64, f64)>) -> PyResult<RatingScale> {
    match scale {
        None => Ok(RatingScale::MOVIELENS),
        Some((min, max, step)) => RatingScale::new(min, max, step).py_err(),
    }
}

/// Ratings, item descriptions and the identifiers they were loaded with.
#[pyclass(module = "latentnet", name = "Dataset", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: core::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Build from `(item, user, rating)` triples of 0-based indices.
    #[staticmethod]
    #[pyo3(signature = (triples, num_items, num_users, profiles=None, scale=None))]
    fn from_triples(
        triples: Vec<(u32, u32, f64)>,
        num_items: usize,
        num_users: usize,
        profiles: Option<Vec<Vec<f64>>>,
        scale: Option<(f64, f64, f64)>,
    ) -> PyResult<Self> {
        let scale = scale_from(scale)?;
        let ratings = SparseRatings::new(
            triples
                .into_iter()
                .map(|(item, user, value)| Rating { item, user, value })
                .collect(),
            num_items,
            num_users,
            scale,
        )
        .py_err()?;
        let profiles = match profiles {
            Some(rows) if !rows.is_empty() => ItemProfiles::from_rows(&rows).py_err()?,
            _ => ItemProfiles::empty(num_items),
        };
        if profiles.num_items() != num_items {
            return Err(PyValueError::new_err(format!(
                "{} profile rows for {num_items} items",
                profiles.num_items()
            )));
        }
        let attributes = profiles.num_attributes();
        Ok(PyDataset {
            inner: core::Dataset {
                ratings,
                profiles,
                item_ids: (0..num_items).map(|i| i.to_string()).collect(),
                user_ids: (0..num_users).map(|u| u.to_string()).collect(),
                attribute_names: (0..attributes).map(|a| format!("a{a}")).collect(),
            },
        })
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.ratings.num_items()
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.ratings.num_users()
    }

    #[getter]
    fn num_attributes(&self) -> usize {
        self.inner.profiles.num_attributes()
    }

    #[getter]
    fn item_ids(&self) -> Vec<String> {
        self.inner.item_ids.clone()
    }

    #[getter]
    fn user_ids(&self) -> Vec<String> {
        self.inner.user_ids.clone()
    }

    #[getter]
    fn attribute_names(&self) -> Vec<String> {
        self.inner.attribute_names.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.ratings.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(ratings={}, items={}, users={}, attributes={})",
            self.inner.ratings.len(),
            self.num_items(),
            self.num_users(),
            self.num_attributes()
        )
    }

    fn item_index(&self, id: &str) -> Option<usize> {
        self.inner.item_index(id)
    }

    fn user_index(&self, id: &str) -> Option<usize> {
        self.inner.user_index(id)
    }

    /// All ratings as `(item, user, rating)` index triples.
    fn ratings(&self) -> Vec<(u32, u32, f64)> {
        self.inner
            .ratings
            .triples()
            .iter()
            .map(|t| (t.item, t.user, t.value))
            .collect()
    }

    fn profile(&self, item: usize) -> PyResult<Vec<f64>> {
        if item >= self.num_items() {
            return Err(PyIndexError::new_err(format!("item {item} out of range")));
        }
        Ok(self.inner.profiles.row(item).to_vec())
    }

    /// Attribute vector for a list of attribute names.
    fn profile_from_names(&self, names: Vec<String>) -> PyResult<Vec<f64>> {
        self.inner.profile_from_names(&names).py_err()
    }

    /// The ratings at the given positions, keeping items, users and profiles.
    fn subset(&self, positions: Vec<usize>) -> PyResult<Self> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.inner.ratings.len()) {
            return Err(PyIndexError::new_err(format!("position {bad} out of range")));
        }
        let mut inner = self.inner.clone();
        inner.ratings = self.inner.ratings.subset(&positions);
        Ok(PyDataset { inner })
    }

    /// `(kept, held)` after removing every rating of the given items.
    fn hold_out_items(&self, items: Vec<usize>) -> (Self, Self) {
        let (train, held) = core::hold_out_items(&self.inner.ratings, &items);
        let mut a = self.inner.clone();
        a.ratings = train;
        let mut b = self.inner.clone();
        b.ratings = held;
        (PyDataset { inner: a }, PyDataset { inner: b })
    }

    fn most_rated(&self, k: usize) -> Vec<usize> {
        self.inner.ratings.most_rated(k)
    }
}

/// Training parameters; any field can be given as a keyword.
#[pyclass(module = "latentnet", name = "TrainConfig", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: core::TrainConfig,
}

fn apply_kwargs(config: &mut core::TrainConfig, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<()> {
    let Some(kwargs) = kwargs else {
        return Ok(());
    };
    for (key, value) in kwargs.iter() {
        let key: String = key.extract()?;
        match key.as_str() {
            "latent" => config.latent = value.extract()?,
            "hidden" => config.hidden = value.extract()?,
            "lambda" | "lambda_" => config.lambda = value.extract()?,
            "eta_initial" => config.eta_initial = value.extract()?,
            "eta_final" => config.eta_final = value.extract()?,
            "gamma" => config.gamma = value.extract()?,
            "init_deviation" => config.init_deviation = value.extract()?,
            "seed" => config.seed = value.extract()?,
            "three_phase" => config.three_phase = value.extract()?,
            "max_epochs" => config.max_epochs = value.extract()?,
            other => return Err(PyValueError::new_err(format!("unknown training parameter `{other}`"))),
        }
    }
    Ok(())
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = core::TrainConfig::default();
        apply_kwargs(&mut inner, kwargs)?;
        inner.validate().py_err()?;
        Ok(PyTrainConfig { inner })
    }

    #[getter]
    fn latent(&self) -> usize {
        self.inner.latent
    }

    #[getter]
    fn hidden(&self) -> Vec<usize> {
        self.inner.hidden.clone()
    }

    #[getter(lambda_)]
    fn lambda(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn eta_initial(&self) -> f64 {
        self.inner.eta_initial
    }

    #[getter]
    fn eta_final(&self) -> f64 {
        self.inner.eta_final
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn three_phase(&self) -> bool {
        self.inner.three_phase
    }

    #[getter]
    fn max_epochs(&self) -> usize {
        self.inner.max_epochs
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig({:?})", self.inner)
    }
}

/// A trained model.
#[pyclass(module = "latentnet", name = "Model", frozen)]
struct PyModel {
    inner: core::TrainedModel,
}

#[pymethods]
impl PyModel {
    /// Train `variant` on `dataset`; keywords override fields of `config`.
    #[staticmethod]
    #[pyo3(signature = (dataset, variant="lnn3pt", config=None, **kwargs))]
    fn train(
        py: Python<'_>,
        dataset: &PyDataset,
        variant: &str,
        config: Option<&PyTrainConfig>,
        kwargs: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let kind: VariantKind = variant.parse().py_err()?;
        let mut base = config.map_or_else(core::TrainConfig::default, |c| c.inner.clone());
        apply_kwargs(&mut base, kwargs)?;
        let variant = core::make_variant(kind, &base).py_err()?;
        let data = &dataset.inner;
        let inner = py.detach(|| variant.train(&data.ratings, &data.profiles)).py_err()?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        core::TrainedModel::load(path).py_err().map(|inner| PyModel { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        core::TrainedModel::from_text(text)
            .py_err()
            .map(|inner| PyModel { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py_err()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.num_items()
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users()
    }

    /// `(phase, epoch, eta, rmse)` per finished epoch.
    #[getter]
    fn log(&self) -> Vec<(String, usize, f64, f64)> {
        self.inner
            .log()
            .epochs
            .iter()
            .map(|r| (r.phase.to_string(), r.epoch, r.eta, r.rmse))
            .collect()
    }

    fn latent(&self, item: usize) -> PyResult<Vec<f64>> {
        if item >= self.inner.num_items() {
            return Err(PyIndexError::new_err(format!("item {item} out of range")));
        }
        Ok(self.inner.latents().row(item).to_vec())
    }

    fn predict(&self, item: usize, user: usize) -> PyResult<f64> {
        self.inner.predict(item, user).py_err()
    }

    fn predict_many(&self, pairs: Vec<(usize, usize)>) -> PyResult<Vec<f64>> {
        pairs.into_iter().map(|(i, u)| self.predict(i, u)).collect()
    }

    /// `(mae, rmse)` over every rating in `dataset`.
    fn score(&self, dataset: &PyDataset) -> PyResult<(f64, f64)> {
        let pairs = core::eval::score(&self.inner, &dataset.inner.ratings).py_err()?;
        Ok((core::mae(&pairs).py_err()?, core::rmse(&pairs).py_err()?))
    }

    /// Rating for a never-rated item described by `profile`, borrowing
    /// latent vectors from the training items of `dataset`.
    #[pyo3(signature = (profile, user, dataset, neighbors=100, dist_thresh=0.0, min_ratings=50))]
    fn coldstart(
        &self,
        profile: Vec<f64>,
        user: usize,
        dataset: &PyDataset,
        neighbors: usize,
        dist_thresh: f64,
        min_ratings: u32,
    ) -> PyResult<f64> {
        let config = ColdStartConfig {
            num_neighbors: neighbors,
            dist_thresh,
            min_ratings,
        };
        core::new_item_prediction(&profile, user, &self.inner, &dataset.inner.ratings, &config).py_err()
    }

    fn __repr__(&self) -> String {
        let t = self.inner.network().topology();
        format!(
            "Model(items={}, users={}, latent={}, attributes={}, hidden={:?})",
            self.inner.num_items(),
            self.inner.num_users(),
            t.latent,
            t.attributes,
            t.hidden
        )
    }
}

/// Load the HetRec 2011 MovieLens directory.
#[pyfunction]
fn load_movielens(directory: PathBuf) -> PyResult<PyDataset> {
    core::load_movielens(
        directory.join("user_ratedmovies.dat"),
        directory.join("movie_genres.dat"),
    )
    .py_err()
    .map(|inner| PyDataset { inner })
}

/// Load `item,user,rating` lines plus optional `item,attribute` lines.
#[pyfunction]
#[pyo3(signature = (ratings, attributes=None, scale=None))]
fn load_csv(ratings: PathBuf, attributes: Option<PathBuf>, scale: Option<(f64, f64, f64)>) -> PyResult<PyDataset> {
    core::load_csv(ratings, attributes.as_deref(), scale_from(scale)?)
        .py_err()
        .map(|inner| PyDataset { inner })
}

/// Positions of the `(train, validation, test)` hold-out split.
#[pyfunction]
fn split_holdout(dataset: &PyDataset, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let split = core::split_holdout(&dataset.inner.ratings, seed).py_err()?;
    Ok((
        split.training_indices(),
        split.validation_indices(),
        split.test_indices(),
    ))
}

/// Fold number of every rating position.
#[pyfunction]
fn kfold(dataset: &PyDataset, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    let split = core::kfold(&dataset.inner.ratings, k, seed).py_err()?;
    Ok(split.fold_of().map(<[usize]>::to_vec).unwrap_or_default())
}

#[pyfunction]
fn mae(pairs: Vec<(f64, f64)>) -> PyResult<f64> {
    core::mae(&pairs).py_err()
}

#[pyfunction]
fn rmse(pairs: Vec<(f64, f64)>) -> PyResult<f64> {
    core::rmse(&pairs).py_err()
}

#[pymodule]
fn latentnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(load_movielens, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(split_holdout, m)?)?;
    m.add_function(wrap_pyfunction!(kfold, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add(
        "VARIANTS",
        VariantKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
