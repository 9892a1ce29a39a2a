//! Little-endian binary encoding shared by the on-disk buffers.

use crate::env::{HumanObservation, JointState, RobotFrame, RobotObservation};
use crate::error::{Error, Result};
use crate::geom::Vec2;

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        v.iter().for_each(|&x| self.f64(x));
    }

    pub fn vec2(&mut self, v: Vec2) {
        self.f64(v.x);
        self.f64(v.y);
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }

    pub fn joint(&mut self, j: &JointState) {
        let r = &j.robot;
        self.f64(r.d_g);
        self.vec2(r.v_r);
        self.f64(r.r_r);
        self.f64(r.v_max);
        self.vec2(j.frame.origin);
        self.f64(j.frame.angle);
        self.u32(j.humans.len() as u32);
        for h in &j.humans {
            self.vec2(h.p);
            self.vec2(h.v);
            self.f64(h.r);
            self.f64(h.d_i);
            self.f64(h.r_sum);
            self.u32(h.index as u32);
        }
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, at: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Parse(format!(
                "{}: truncated at byte {}",
                self.what, self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    pub fn expect(&mut self, magic: &[u8]) -> Result<()> {
        if self.take(magic.len()).ok() != Some(magic) {
            return Err(Error::Parse(format!("{}: bad magic", self.what)));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::Parse(format!(
                "{}: {} trailing bytes",
                self.what,
                self.bytes.len() - self.at
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn vec2(&mut self) -> Result<Vec2> {
        Ok(Vec2::new(self.f64()?, self.f64()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn string(&mut self) -> Result<String> {
        let what = self.what;
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::Parse(format!("{what}: invalid UTF-8")))
    }

    pub fn joint(&mut self) -> Result<JointState> {
        let robot = RobotObservation {
            d_g: self.f64()?,
            v_r: self.vec2()?,
            r_r: self.f64()?,
            v_max: self.f64()?,
        };
        let frame = RobotFrame {
            origin: self.vec2()?,
            angle: self.f64()?,
        };
        let n = self.u32()? as usize;
        let mut humans = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            humans.push(HumanObservation {
                p: self.vec2()?,
                v: self.vec2()?,
                r: self.f64()?,
                d_i: self.f64()?,
                r_sum: self.f64()?,
                index: self.u32()? as usize,
            });
        }
        Ok(JointState {
            robot,
            humans,
            frame,
        })
    }
}
