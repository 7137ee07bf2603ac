//! VTU frames, the stress–strain CSV and the PVD collection.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use polyfrac::constitutive::LocalDivergence;
use polyfrac::fem::{volume_average, FemError};
use polyfrac::simulation::Simulation;
use thiserror::Error;
use vtkio::model::{
    Attribute, Attributes, ByteOrder, CellType, Cells, DataSet, UnstructuredGridPiece, Version, VertexNumbers,
};
use vtkio::Vtk;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("vtu export to {path}: {message}")]
    Vtk { path: PathBuf, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("output evaluation failed: {0}")]
    Local(#[from] LocalDivergence),
    #[error("region `{name}`: {source}")]
    Region { name: String, source: FemError },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One output frame on the master-node mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputFrame {
    pub step: usize,
    pub time: f64,
    pub boundary_displacement: f64,
    pub dim: usize,
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    /// Displacement per point, padded to three components.
    pub u: Vec<[f64; 3]>,
    pub d: Vec<f64>,
    /// Cell average of the nodal `g` values of the cell's own grain.
    pub g: Vec<[f64; 3]>,
    pub eps_p: Vec<f64>,
    pub g_e: Vec<f64>,
    pub phi: Vec<f64>,
    pub s12: Vec<f64>,
    pub grain: Vec<usize>,
    /// Volume-averaged S12 per named region.
    pub region_s12: BTreeMap<String, f64>,
}

impl OutputFrame {
    /// Samples the last accepted state. An empty region list means every cell.
    pub fn capture(
        sim: &Simulation,
        step: usize,
        regions: &BTreeMap<String, Vec<usize>>,
    ) -> Result<Self, OutputError> {
        let disc = &sim.disc;
        let mesh = &disc.mesh;
        let layout = &disc.layout;
        let dim = mesh.dim;
        let fields = &sim.fields;
        let n_master = layout.n_master;
        let points = mesh.nodes[..n_master].to_vec();
        let u = (0..n_master)
            .map(|m| {
                let mut v = [0.0; 3];
                for (c, x) in v.iter_mut().enumerate().take(dim) {
                    *x = fields.u[layout.u_dof(m, c)];
                }
                v
            })
            .collect();
        let d = (0..n_master).map(|m| fields.d[layout.d_dof(m)]).collect();
        let cells: Vec<Vec<usize>> = mesh
            .cells
            .iter()
            .map(|cell| cell.iter().map(|&n| layout.master[n]).collect())
            .collect();
        let g = mesh
            .cells
            .iter()
            .map(|cell| {
                let mut v = [0.0; 3];
                for &n in cell {
                    for (c, x) in v.iter_mut().enumerate().take(dim) {
                        *x += fields.g[layout.g_dof(n, c)] / cell.len() as f64;
                    }
                }
                v
            })
            .collect();
        let out = sim.cell_outputs()?;
        let volumes = disc.volumes();
        let mut region_s12 = BTreeMap::new();
        for (name, labels) in regions {
            let cells: Vec<usize> = if labels.is_empty() {
                (0..disc.n_cells()).collect()
            } else {
                disc.cells_of_grains(labels)
            };
            let avg = volume_average(&volumes, &out.s12, &cells).map_err(|source| OutputError::Region {
                name: name.clone(),
                source,
            })?;
            region_s12.insert(name.clone(), avg);
        }
        Ok(Self {
            step,
            time: sim.time(),
            boundary_displacement: sim.boundary_displacement(sim.time()),
            dim,
            points,
            cells,
            u,
            d,
            g,
            eps_p: out.eps_p,
            g_e: out.g_e,
            phi: out.phi,
            s12: out.s12,
            grain: mesh.grain_of_cell.iter().map(|&g| mesh.grain_labels[g]).collect(),
            region_s12,
        })
    }

    pub fn to_vtk(&self) -> Vtk {
        let flat3 = |v: &[[f64; 3]]| v.iter().flatten().copied().collect::<Vec<f64>>();
        let mut offsets = Vec::with_capacity(self.cells.len());
        let mut connectivity = Vec::new();
        for cell in &self.cells {
            connectivity.extend(cell.iter().map(|&n| n as u64));
            offsets.push(connectivity.len() as u64);
        }
        let cell_type = if self.dim == 2 { CellType::Triangle } else { CellType::Tetra };
        let point = vec![
            Attribute::vectors("u").with_data(flat3(&self.u)),
            Attribute::scalars("d", 1).with_data(self.d.clone()),
        ];
        let cell = vec![
            Attribute::vectors("g").with_data(flat3(&self.g)),
            Attribute::scalars("eps_p", 1).with_data(self.eps_p.clone()),
            Attribute::scalars("g_e", 1).with_data(self.g_e.clone()),
            Attribute::scalars("phi", 1).with_data(self.phi.clone()),
            Attribute::scalars("S12", 1).with_data(self.s12.clone()),
            Attribute::scalars("grain", 1).with_data(self.grain.iter().map(|&g| g as u64).collect::<Vec<_>>()),
        ];
        Vtk {
            version: Version::new((1, 0)),
            title: format!("step {} t = {}", self.step, self.time),
            byte_order: ByteOrder::LittleEndian,
            file_path: None,
            data: DataSet::inline(UnstructuredGridPiece {
                points: flat3(&self.points).into(),
                cells: Cells {
                    cell_verts: VertexNumbers::XML { connectivity, offsets },
                    types: vec![cell_type; self.cells.len()],
                },
                data: Attributes { point, cell },
            }),
        }
    }
}

pub fn frame_name(step: usize) -> String {
    format!("frame_{step:06}.vtu")
}

pub const CSV_NAME: &str = "stress_strain.csv";
pub const PVD_NAME: &str = "frames.pvd";

/// Writes frames into an output directory and keeps the CSV and PVD in sync.
#[derive(Debug)]
pub struct FrameWriter {
    dir: PathBuf,
    regions: Vec<String>,
    /// `(time, file)` of every written frame.
    entries: Vec<(f64, String)>,
}

impl FrameWriter {
    /// Starts a fresh output directory.
    pub fn create(dir: &Path, regions: &BTreeMap<String, Vec<usize>>) -> Result<Self, OutputError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let w = Self {
            dir: dir.to_path_buf(),
            regions: regions.keys().cloned().collect(),
            entries: Vec::new(),
        };
        let path = w.dir.join(CSV_NAME);
        let mut csv = csv::Writer::from_path(&path)?;
        csv.write_record(w.header())?;
        csv.flush().map_err(io_err(&path))?;
        Ok(w)
    }

    /// Reopens an output directory, dropping CSV rows past `step`.
    pub fn resume(dir: &Path, regions: &BTreeMap<String, Vec<usize>>, step: usize) -> Result<Self, OutputError> {
        let path = dir.join(CSV_NAME);
        let mut reader = csv::Reader::from_path(&path)?;
        let mut kept = Vec::new();
        for row in reader.records() {
            let row = row?;
            let s: usize = row.get(0).and_then(|s| s.parse().ok()).unwrap_or(usize::MAX);
            if s <= step {
                kept.push(row);
            }
        }
        let mut w = Self {
            dir: dir.to_path_buf(),
            regions: regions.keys().cloned().collect(),
            entries: Vec::new(),
        };
        let mut csv = csv::Writer::from_path(&path)?;
        csv.write_record(w.header())?;
        for row in &kept {
            csv.write_record(row)?;
            let s: usize = row[0].parse().unwrap_or(0);
            let t: f64 = row[1].parse().unwrap_or(0.0);
            w.entries.push((t, frame_name(s)));
        }
        csv.flush().map_err(io_err(&path))?;
        w.write_pvd()?;
        Ok(w)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string(), "time".to_string(), "boundary_displacement".to_string()];
        h.extend(self.regions.iter().map(|r| format!("S12_{r}")));
        h
    }

    pub fn write(&mut self, frame: &OutputFrame) -> Result<(), OutputError> {
        let name = frame_name(frame.step);
        let path = self.dir.join(&name);
        frame.to_vtk().export(&path).map_err(|e| OutputError::Vtk {
            path: path.clone(),
            message: e.to_string(),
        })?;

        let csv_path = self.dir.join(CSV_NAME);
        let file = fs::OpenOptions::new()
            .append(true)
            .open(&csv_path)
            .map_err(io_err(&csv_path))?;
        let mut csv = csv::Writer::from_writer(file);
        let mut row = vec![
            frame.step.to_string(),
            format!("{:e}", frame.time),
            format!("{:e}", frame.boundary_displacement),
        ];
        row.extend(self.regions.iter().map(|r| format!("{:e}", frame.region_s12[r])));
        csv.write_record(&row)?;
        csv.flush().map_err(io_err(&csv_path))?;

        self.entries.push((frame.time, name));
        self.write_pvd()
    }

    fn write_pvd(&self) -> Result<(), OutputError> {
        let path = self.dir.join(PVD_NAME);
        let mut s = String::from(
            "<?xml version=\"1.0\"?>\n<VTKFile type=\"Collection\" version=\"0.1\" byte_order=\"LittleEndian\">\n  <Collection>\n",
        );
        for (t, f) in &self.entries {
            s.push_str(&format!("    <DataSet timestep=\"{t:e}\" group=\"\" part=\"0\" file=\"{f}\"/>\n"));
        }
        s.push_str("  </Collection>\n</VTKFile>\n");
        let tmp = path.with_extension("pvd.tmp");
        File::create(&tmp)
            .and_then(|mut f| f.write_all(s.as_bytes()))
            .map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
