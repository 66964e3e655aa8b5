//! TF-IDF matrix and its rank-k truncated SVD (latent semantic analysis).
//!
//! Weights: raw term counts times smoothed IDF `ln((1 + N) / (1 + df)) + 1`,
//! with every document column scaled to unit L2 norm. The term-by-document
//! matrix `A` is decomposed as `A = U S V^T`; a token stream is projected into
//! the latent space as `U_k^T x`, where `x` is its normalized TF-IDF vector.

use std::collections::{BTreeSet, HashMap};

use log::info;
use nalgebra::{DMatrix, DVector};

use super::text::TokenStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ProjectionModel {
    vocabulary: HashMap<String, usize>,
    terms: Vec<String>,
    idf: Vec<f64>,
    /// Terms x k, orthonormal columns (left singular vectors).
    basis: DMatrix<f64>,
    singular_values: Vec<f64>,
    k: usize,
}

impl ProjectionModel {
    /// Builds the model. `k` is clamped into `[1, min(#terms, #docs)]`.
    pub fn build(documents: &[TokenStream], k: usize) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::Config("projection needs at least one document".into()));
        }
        let terms: Vec<String> = documents
            .iter()
            .flat_map(|d| d.iter())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        if terms.is_empty() {
            return Err(Error::Validation(
                "all projection documents are empty".into(),
            ));
        }
        let vocabulary: HashMap<String, usize> = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();

        let n_docs = documents.len();
        let mut df = vec![0usize; terms.len()];
        for doc in documents {
            let unique: BTreeSet<&str> = doc.iter().collect();
            for t in unique {
                df[vocabulary[t]] += 1;
            }
        }
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| ((1.0 + n_docs as f64) / (1.0 + d as f64)).ln() + 1.0)
            .collect();

        let max_k = terms.len().min(n_docs);
        let k_eff = k.clamp(1, max_k);
        if k_eff != k {
            info!("latent dimension {k} clamped to {k_eff}");
        }

        let mut model = ProjectionModel {
            vocabulary,
            terms,
            idf,
            basis: DMatrix::zeros(0, 0),
            singular_values: Vec::new(),
            k: k_eff,
        };
        let a = model.tfidf_matrix(documents);
        let svd = a.svd(true, false);
        let u = svd
            .u
            .ok_or_else(|| Error::Validation("SVD did not produce U".into()))?;
        let sv = svd.singular_values;
        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));

        let mut basis = DMatrix::zeros(model.terms.len(), k_eff);
        for (c, &src) in order.iter().take(k_eff).enumerate() {
            let mut col = u.column(src).clone_owned();
            // Fix the sign so the largest-magnitude entry is positive.
            let pivot = col.iter().copied().fold(0.0f64, |acc, v| {
                if v.abs() > acc.abs() {
                    v
                } else {
                    acc
                }
            });
            if pivot < 0.0 {
                col.neg_mut();
            }
            basis.set_column(c, &col);
        }
        model.singular_values = order.iter().map(|&i| sv[i]).collect();
        model.basis = basis;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn contains(&self, term: &str) -> bool {
        self.vocabulary.contains_key(term)
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocabulary.get(term).map(|&i| self.idf[i])
    }

    /// All singular values in descending order.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Unit-normalized TF-IDF vector; out-of-vocabulary tokens are ignored.
    pub fn tfidf_vector(&self, doc: &TokenStream) -> DVector<f64> {
        let mut v = DVector::zeros(self.terms.len());
        for t in doc.iter() {
            if let Some(&i) = self.vocabulary.get(t) {
                v[i] += self.idf[i];
            }
        }
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        v
    }

    /// Term-by-document TF-IDF matrix of `documents` under this vocabulary.
    pub fn tfidf_matrix(&self, documents: &[TokenStream]) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.terms.len(), documents.len());
        for (j, doc) in documents.iter().enumerate() {
            a.set_column(j, &self.tfidf_vector(doc));
        }
        a
    }

    pub fn project_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(v)
    }

    pub fn project(&self, doc: &TokenStream) -> DVector<f64> {
        self.project_vector(&self.tfidf_vector(doc))
    }

    /// Latent vector of a single term (its row of `U_k`).
    pub fn term_vector(&self, term: &str) -> Option<DVector<f64>> {
        self.vocabulary
            .get(term)
            .map(|&i| self.basis.row(i).transpose())
    }

    /// `||A - U_k U_k^T A||_F`, i.e. the rank-k reconstruction error of `documents`.
    pub fn reconstruction_error(&self, documents: &[TokenStream]) -> f64 {
        let a = self.tfidf_matrix(documents);
        let approx = &self.basis * self.basis.tr_mul(&a);
        (a - approx).norm()
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::text::sanitize;

    fn docs(texts: &[&str]) -> Vec<TokenStream> {
        texts.iter().map(|t| sanitize(t)).collect()
    }

    #[test]
    fn rank_one_single_document() {
        let d = docs(&["untrusted data deserialization"]);
        let m = ProjectionModel::build(&d, 1).unwrap();
        assert_eq!(m.k(), 1);
        let p = m.project(&d[0]);
        assert_eq!(p.len(), 1);
        assert!(p[0].abs() > 1e-9);
    }

    #[test]
    fn zero_vector_projects_to_zero() {
        let d = docs(&["alpha beta", "beta gamma", "gamma delta"]);
        let m = ProjectionModel::build(&d, 2).unwrap();
        let z = m.project_vector(&DVector::zeros(m.terms().len()));
        assert_eq!(z.len(), 2);
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(m.project(&TokenStream::default()).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn k_is_clamped() {
        let d = docs(&["alpha beta", "beta gamma"]);
        assert_eq!(ProjectionModel::build(&d, 100).unwrap().k(), 2);
        assert_eq!(ProjectionModel::build(&d, 0).unwrap().k(), 1);
    }

    #[test]
    fn empty_documents_rejected() {
        assert!(ProjectionModel::build(&[], 1).is_err());
        assert!(ProjectionModel::build(&[TokenStream::default()], 1).is_err());
    }

    #[test]
    fn reconstruction_error_non_increasing() {
        let d = docs(&[
            "deserialization of untrusted data allows code execution",
            "sql injection through unsanitized query parameters",
            "cross site scripting via unescaped html output",
            "path traversal allows reading arbitrary files",
            "xml external entity expansion in parser configuration",
        ]);
        let mut last = f64::INFINITY;
        for k in 1..=5 {
            let m = ProjectionModel::build(&d, k).unwrap();
            let err = m.reconstruction_error(&d);
            assert!(err <= last + 1e-12, "k={k}: {err} > {last}");
            last = err;
        }
        assert!(last < 1e-9, "full rank should reconstruct exactly: {last}");
    }

    #[test]
    fn basis_columns_orthonormal() {
        let d = docs(&["alpha beta", "beta gamma delta", "gamma alpha", "epsilon"]);
        let m = ProjectionModel::build(&d, 3).unwrap();
        let gram = m.basis().tr_mul(m.basis());
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expected).abs() < 1e-10);
            }
        }
        let sv = m.singular_values();
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
    }
}
