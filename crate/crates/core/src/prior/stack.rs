//! Channel-stacked image vectors shared by the priors and the sampler.
//!
//! A [`Stack`] lays its planes out channel-major: `[pet, mri.re, mri.im]` for
//! a joint iterate, `[pet]` or `[mri.re, mri.im]` for single-modality ones.
//! Flattened, this is the stacked pair vector the Gaussian mixture works on.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, ImagePair, RealGrid, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    Joint,
    Pet,
    Mri,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Joint => 3,
            Channels::Pet => 1,
            Channels::Mri => 2,
        }
    }

    pub fn has_pet(self) -> bool {
        matches!(self, Channels::Joint | Channels::Pet)
    }

    pub fn has_mri(self) -> bool {
        matches!(self, Channels::Joint | Channels::Mri)
    }

    /// Plane index of the PET channel, if present.
    pub fn pet_plane(self) -> Option<usize> {
        self.has_pet().then_some(0)
    }

    /// Plane index of the MRI real part; the imaginary part follows it.
    pub fn mri_plane(self) -> Option<usize> {
        match self {
            Channels::Joint => Some(1),
            Channels::Mri => Some(0),
            Channels::Pet => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channels::Joint => "joint",
            Channels::Pet => "pet",
            Channels::Mri => "mri",
        }
    }
}

impl std::str::FromStr for Channels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Channels::Joint),
            "pet" => Ok(Channels::Pet),
            "mri" => Ok(Channels::Mri),
            other => Err(Error::param(format!("unknown channel set '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stack {
    shape: Shape,
    channels: Channels,
    data: Vec<f64>,
}

impl Stack {
    pub fn new(shape: Shape, channels: Channels, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() * channels.count() {
            return Err(Error::dim(format!(
                "stack of {} {shape} planes needs {} values, got {}",
                channels.count(),
                shape.len() * channels.count(),
                data.len()
            )));
        }
        Ok(Self { shape, channels, data })
    }

    pub fn zeros(shape: Shape, channels: Channels) -> Self {
        Self {
            shape,
            channels,
            data: vec![0.0; shape.len() * channels.count()],
        }
    }

    pub fn from_pair(pair: &ImagePair) -> Self {
        Self::from_parts(Some(pair.pet()), Some(pair.mri())).expect("pair planes share a shape")
    }

    pub fn from_pet(pet: &RealGrid) -> Self {
        Self::from_parts(Some(pet), None).expect("single plane")
    }

    pub fn from_mri(mri: &ComplexGrid) -> Self {
        Self::from_parts(None, Some(mri)).expect("single plane")
    }

    pub fn from_parts(pet: Option<&RealGrid>, mri: Option<&ComplexGrid>) -> Result<Self> {
        let (channels, shape) = match (pet, mri) {
            (Some(p), Some(m)) => {
                p.shape().ensure_eq(m.shape(), "stack planes")?;
                (Channels::Joint, p.shape())
            }
            (Some(p), None) => (Channels::Pet, p.shape()),
            (None, Some(m)) => (Channels::Mri, m.shape()),
            (None, None) => return Err(Error::param("a stack needs at least one modality")),
        };
        let mut data = Vec::with_capacity(shape.len() * channels.count());
        if let Some(p) = pet {
            data.extend_from_slice(p.data());
        }
        if let Some(m) = mri {
            data.extend(m.data().iter().map(|z| z.re));
            data.extend(m.data().iter().map(|z| z.im));
        }
        Ok(Self { shape, channels, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, k: usize) -> &[f64] {
        let n = self.shape.len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn plane_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.shape.len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn pet(&self) -> Option<RealGrid> {
        self.channels
            .pet_plane()
            .map(|k| RealGrid::from_parts(self.shape, self.plane(k).to_vec()))
    }

    pub fn mri(&self) -> Option<ComplexGrid> {
        self.channels.mri_plane().map(|k| {
            let re = self.plane(k);
            let im = self.plane(k + 1);
            ComplexGrid::from_parts(
                self.shape,
                re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect(),
            )
        })
    }

    pub fn set_pet(&mut self, pet: &RealGrid) -> Result<()> {
        pet.shape().ensure_eq(self.shape, "set_pet")?;
        let k = self
            .channels
            .pet_plane()
            .ok_or_else(|| Error::param("stack has no PET channel"))?;
        self.plane_mut(k).copy_from_slice(pet.data());
        Ok(())
    }

    pub fn set_mri(&mut self, mri: &ComplexGrid) -> Result<()> {
        mri.shape().ensure_eq(self.shape, "set_mri")?;
        let k = self
            .channels
            .mri_plane()
            .ok_or_else(|| Error::param("stack has no MRI channel"))?;
        for (d, z) in self.plane_mut(k).iter_mut().zip(mri.data()) {
            *d = z.re;
        }
        for (d, z) in self.plane_mut(k + 1).iter_mut().zip(mri.data()) {
            *d = z.im;
        }
        Ok(())
    }

    /// Restricts a joint stack to one modality.
    pub fn select(&self, channels: Channels) -> Result<Stack> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        if self.channels != Channels::Joint {
            return Err(Error::param(format!(
                "cannot select {} channels from a {} stack",
                channels.as_str(),
                self.channels.as_str()
            )));
        }
        let n = self.shape.len();
        let data = match channels {
            Channels::Pet => self.data[..n].to_vec(),
            Channels::Mri => self.data[n..].to_vec(),
            Channels::Joint => unreachable!(),
        };
        Ok(Stack {
            shape: self.shape,
            channels,
            data,
        })
    }

    pub fn to_pair(&self) -> Result<ImagePair> {
        match (self.pet(), self.mri()) {
            (Some(p), Some(m)) => ImagePair::new(p, m),
            _ => Err(Error::param("stack is not a joint pair")),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_layout_is_pet_then_re_then_im() {
        let pet = RealGrid::new(1, 2, vec![1.0, 2.0]).unwrap();
        let mri = ComplexGrid::new(1, 2, vec![Complex64::new(3.0, 5.0), Complex64::new(4.0, 6.0)]).unwrap();
        let s = Stack::from_pair(&ImagePair::new(pet.clone(), mri.clone()).unwrap());
        assert_eq!(s.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(s.pet().unwrap(), pet);
        assert_eq!(s.mri().unwrap(), mri);
        assert_eq!(s.select(Channels::Mri).unwrap().data(), &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(s.select(Channels::Pet).unwrap().data(), &[1.0, 2.0]);
    }
}
