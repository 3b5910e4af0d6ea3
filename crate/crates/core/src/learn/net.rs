//! Fully connected networks over a flat parameter slice.
//!
//! Layer `l` maps `sizes[l]` to `sizes[l + 1]` inputs. Its parameters are a
//! row-major weight matrix `(out, in)` followed by the bias, and layers are
//! laid out back to back. Hidden layers use ELU; the last layer is linear.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use crate::scalar::Scalar;

#[inline]
pub fn elu<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
pub fn elu_grad<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        T::one()
    } else {
        z.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    pub sizes: Vec<usize>,
}

/// Values kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    /// Input to each layer.
    inputs: Vec<Array2<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<T>>,
}

impl MlpShape {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        MlpShape { sizes }
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input(&self) -> usize {
        self.sizes[0]
    }

    pub fn output(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_len(&self, l: usize) -> usize {
        self.sizes[l + 1] * self.sizes[l] + self.sizes[l + 1]
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers()).map(|l| self.layer_len(l)).sum()
    }

    fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|k| self.layer_len(k)).sum()
    }

    /// Weight `(out, in)` and bias views of layer `l`.
    pub fn layer<'a, T>(&self, theta: &'a [T], l: usize) -> (ArrayView2<'a, T>, ArrayView1<'a, T>) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let off = self.layer_offset(l);
        let w = ArrayView2::from_shape((o, i), &theta[off..off + o * i]).unwrap();
        let b = ArrayView1::from(&theta[off + o * i..off + o * i + o]);
        (w, b)
    }

    pub fn layer_mut<'a, T>(&self, theta: &'a mut [T], l: usize) -> (ArrayViewMut2<'a, T>, ArrayViewMut1<'a, T>) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let off = self.layer_offset(l);
        let (w, b) = theta[off..off + o * i + o].split_at_mut(o * i);
        (ArrayViewMut2::from_shape((o, i), w).unwrap(), ArrayViewMut1::from(b))
    }

    pub fn forward<T: Scalar>(&self, theta: &[T], x: ArrayView2<'_, T>) -> Array2<T> {
        let mut a = x.to_owned();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(theta, l);
            let mut z = a.dot(&w.t());
            z += &b;
            if l + 1 < self.n_layers() {
                z.mapv_inplace(elu);
            }
            a = z;
        }
        a
    }

    pub fn forward_cached<T: Scalar>(&self, theta: &[T], x: ArrayView2<'_, T>) -> (Array2<T>, MlpCache<T>) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.n_layers()),
            pre: Vec::with_capacity(self.n_layers()),
        };
        let mut a = x.to_owned();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(theta, l);
            let mut z = a.dot(&w.t());
            z += &b;
            cache.inputs.push(a);
            if l + 1 < self.n_layers() {
                a = z.mapv(elu);
                cache.pre.push(z);
            } else {
                a = z;
            }
        }
        (a, cache)
    }

    /// Adds `d loss / d theta` to `grad` given `d loss / d output`.
    pub fn backward<T: Scalar>(&self, theta: &[T], cache: &MlpCache<T>, d_out: Array2<T>, grad: &mut [T]) {
        let mut dz = d_out;
        for l in (0..self.n_layers()).rev() {
            let (w, _) = self.layer(theta, l);
            {
                let (mut gw, mut gb) = self.layer_mut(grad, l);
                gw += &dz.t().dot(&cache.inputs[l]);
                gb += &dz.sum_axis(Axis(0));
            }
            if l > 0 {
                let mut da = dz.dot(&w);
                da.zip_mut_with(&cache.pre[l - 1], |d, &z| *d = *d * elu_grad(z));
                dz = da;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn elu_probe() {
        assert!((elu(-1.0f64) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        assert_eq!(elu(2.0f64), 2.0);
        // Probe neuron: identity weight, zero bias, input -1.
        let s = MlpShape::new(1, &[1], 1);
        let theta = [1.0f64, 0.0, 1.0, 0.0];
        let out = s.forward(&theta, array![[-1.0]].view());
        assert!((out[[0, 0]] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let s = MlpShape::new(5, &[8, 4], 3);
        let theta = vec![0.0f64; s.param_count()];
        let out = s.forward(&theta, Array2::from_elem((2, 5), 0.7).view());
        assert!(out.iter().all(|v| *v == 0.0));
        assert_eq!(s.param_count(), 5 * 8 + 8 + 8 * 4 + 4 + 4 * 3 + 3);
    }

    #[test]
    fn cached_forward_matches_plain() {
        let s = MlpShape::new(3, &[4], 2);
        let theta: Vec<f64> = (0..s.param_count()).map(|k| ((k * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let x = array![[0.1, -0.4, 2.0], [-1.0, 0.3, 0.0]];
        let (a, _) = s.forward_cached(&theta, x.view());
        assert_eq!(a, s.forward(&theta, x.view()));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let s = MlpShape::new(3, &[5, 4], 2);
        let theta: Vec<f64> = (0..s.param_count()).map(|k| ((k * 37 % 13) as f64 - 6.0) / 9.0).collect();
        let x = array![[0.1, -0.4, 2.0], [-1.0, 0.3, 0.0], [0.5, 0.5, -0.5]];
        // Loss = sum of outputs weighted by c.
        let c = array![[1.0, -2.0], [0.5, 0.25], [-1.0, 3.0]];
        let loss = |th: &[f64]| (s.forward(th, x.view()) * &c).sum();
        let (_, cache) = s.forward_cached(&theta, x.view());
        let mut g = vec![0.0; theta.len()];
        s.backward(&theta, &cache, c.clone(), &mut g);
        for k in 0..theta.len() {
            let h = 1e-6;
            let mut p = theta.clone();
            p[k] += h;
            let mut m = theta.clone();
            m[k] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }
}
