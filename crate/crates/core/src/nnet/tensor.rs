//! Minimal dense N-dimensional tensor, row-major `f64`.
//!
//! Large backing buffers are recycled through a thread-local pool: training
//! allocates hundreds of megabytes of short-lived activations per batch, and
//! round-tripping those through the system allocator costs more in page
//! faults than the arithmetic on them.

use std::cell::RefCell;

use crate::error::{Error, Result};

const POOL_MIN_BYTES: usize = 256 * 1024;
const POOL_MAX_ENTRIES: usize = 24;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

fn pool_take_zeroed(len: usize) -> Vec<f64> {
    if len * 8 >= POOL_MIN_BYTES {
        let reused = POOL.with(|pool| {
            let mut pool = pool.borrow_mut();
            let fit = pool
                .iter()
                .position(|b| b.capacity() >= len && b.capacity() <= len.saturating_mul(4));
            fit.map(|i| pool.swap_remove(i))
        });
        if let Some(mut buf) = reused {
            buf.clear();
            buf.resize(len, 0.0);
            return buf;
        }
    }
    vec![0.0; len]
}

fn pool_give(buf: Vec<f64>) {
    if buf.capacity() * 8 < POOL_MIN_BYTES {
        return;
    }
    POOL.with(|pool| {
        let mut pool = pool.borrow_mut();
        if pool.len() < POOL_MAX_ENTRIES {
            pool.push(buf);
        }
    });
}

#[derive(Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Drop for Tensor {
    fn drop(&mut self) {
        pool_give(std::mem::take(&mut self.data));
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Tensor {
        let mut data = pool_take_zeroed(self.data.len());
        data.copy_from_slice(&self.data);
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: pool_take_zeroed(shape.iter().product()),
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(mut self) -> Vec<f64> {
        std::mem::take(&mut self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot reshape {:?} ({} values) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_element_count() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::from_vec(vec![2, 6], (0..12).map(|v| v as f64).collect()).unwrap();
        let r = t.clone().reshape(vec![3, 4]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![5, 5]).is_err());
    }

    #[test]
    fn pooled_buffers_come_back_zeroed() {
        let big = 64 * 1024;
        let mut t = Tensor::zeros(&[big]);
        for v in t.data_mut() {
            *v = 7.0;
        }
        drop(t);
        let t2 = Tensor::zeros(&[big]);
        assert!(t2.data().iter().all(|&v| v == 0.0));
    }
}
