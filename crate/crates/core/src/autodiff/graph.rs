use std::fmt;

use thiserror::Error;

/// Shape of a dense value stored in a graph node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    /// Rows, columns. Storage is row-major.
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => write!(f, "scalar"),
            Shape::Vector(n) => write!(f, "vector[{n}]"),
            Shape::Matrix(r, c) => write!(f, "matrix[{r}x{c}]"),
        }
    }
}

/// Dense 64-bit array with a shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Shape::Scalar,
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    /// Row-major matrix. Panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self {
            shape: Shape::Matrix(rows, cols),
            data,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    /// The single value of a scalar, or the first entry otherwise.
    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

/// Handle to a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node {node} ({op}): shape mismatch between {left} and {right}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("node {node} ({op}): input {input} does not exist")]
    UnknownNode {
        node: usize,
        op: &'static str,
        input: usize,
    },
    #[error("node {node} ({op}): slice {start}..{end} out of range for {shape}")]
    SliceOutOfRange {
        node: usize,
        op: &'static str,
        start: usize,
        end: usize,
        shape: Shape,
    },
    #[error("node {node} ({op}): needs at least one input")]
    EmptyReduction { node: usize, op: &'static str },
    #[error("loss node {node} must be scalar, found {shape}")]
    NonScalarLoss { node: usize, shape: Shape },
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Constant real times an array.
    Scale(NodeId, f64),
    /// Scalar node times an array node.
    ScalarMul(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Affine { w: NodeId, x: NodeId, b: NodeId },
    Tanh(NodeId),
    Square(NodeId),
    Sum(Vec<NodeId>),
    Mean(Vec<NodeId>),
    Slice { input: NodeId, start: usize },
    Element { input: NodeId, index: usize },
    Detach,
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    name: Option<String>,
}

/// A single-use computation graph.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and the forward values are available as soon as a node is created.
/// [`Graph::backward`] walks the nodes in reverse to accumulate adjoints.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape
    }

    /// Leaf variable name, if `id` is a named leaf.
    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.0].name.as_deref()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            name: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn next_id(&self) -> usize {
        self.nodes.len()
    }

    fn check(&self, op: &'static str, input: NodeId) -> Result<&Tensor, GraphError> {
        self.nodes
            .get(input.0)
            .map(|n| &n.value)
            .ok_or(GraphError::UnknownNode {
                node: self.next_id(),
                op,
                input: input.0,
            })
    }

    fn mismatch(&self, op: &'static str, left: Shape, right: Shape) -> GraphError {
        GraphError::ShapeMismatch {
            node: self.next_id(),
            op,
            left,
            right,
        }
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Shape, GraphError> {
        let (sa, sb) = (self.check(op, a)?.shape, self.check(op, b)?.shape);
        if sa != sb {
            return Err(self.mismatch(op, sa, sb));
        }
        Ok(sa)
    }

    /// Node that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Differentiable input variable.
    pub fn leaf(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        let id = self.push(Op::Leaf, value);
        self.nodes[id.0].name = Some(name.into());
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("add", a, b)?;
        let (va, vb) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
        let data = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        Ok(self.push(Op::Add(a, b), Tensor { shape, data }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("sub", a, b)?;
        let (va, vb) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
        let data = va.iter().zip(vb).map(|(x, y)| x - y).collect();
        Ok(self.push(Op::Sub(a, b), Tensor { shape, data }))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, GraphError> {
        let va = self.check("scale", a)?;
        let value = Tensor {
            shape: va.shape,
            data: va.data.iter().map(|x| x * factor).collect(),
        };
        Ok(self.push(Op::Scale(a, factor), value))
    }

    /// `s * a` where `s` is a scalar node.
    pub fn scalar_mul(&mut self, s: NodeId, a: NodeId) -> Result<NodeId, GraphError> {
        let vs = self.check("scalar_mul", s)?;
        if vs.shape != Shape::Scalar {
            return Err(self.mismatch("scalar_mul", vs.shape, Shape::Scalar));
        }
        let k = vs.data[0];
        let va = self.check("scalar_mul", a)?;
        let value = Tensor {
            shape: va.shape,
            data: va.data.iter().map(|x| k * x).collect(),
        };
        Ok(self.push(Op::ScalarMul(s, a), value))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("mul", a, b)?;
        let (va, vb) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
        let data = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        Ok(self.push(Op::Mul(a, b), Tensor { shape, data }))
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, GraphError> {
        let rows = self.matvec_rows("matvec", w, x)?;
        let data = matvec_into(&self.nodes[w.0].value, &self.nodes[x.0].value, None);
        debug_assert_eq!(data.len(), rows);
        Ok(self.push(Op::MatVec(w, x), Tensor::vector(data)))
    }

    fn matvec_rows(&self, op: &'static str, w: NodeId, x: NodeId) -> Result<usize, GraphError> {
        let (sw, sx) = (self.check(op, w)?.shape, self.check(op, x)?.shape);
        match (sw, sx) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if c == n => Ok(r),
            _ => Err(self.mismatch(op, sw, sx)),
        }
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("dot", a, b)?;
        if !matches!(shape, Shape::Vector(_)) {
            return Err(self.mismatch("dot", shape, shape));
        }
        let (va, vb) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
        let value = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(value)))
    }

    /// `w x + b`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let rows = self.matvec_rows("affine", w, x)?;
        let sb = self.check("affine", b)?.shape;
        if sb != Shape::Vector(rows) {
            return Err(self.mismatch("affine", Shape::Vector(rows), sb));
        }
        let data = matvec_into(
            &self.nodes[w.0].value,
            &self.nodes[x.0].value,
            Some(&self.nodes[b.0].value.data),
        );
        Ok(self.push(Op::Affine { w, x, b }, Tensor::vector(data)))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let va = self.check("tanh", a)?;
        let value = Tensor {
            shape: va.shape,
            data: va.data.iter().map(|x| x.tanh()).collect(),
        };
        Ok(self.push(Op::Tanh(a), value))
    }

    /// Elementwise square.
    pub fn square(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let va = self.check("square", a)?;
        let value = Tensor {
            shape: va.shape,
            data: va.data.iter().map(|x| x * x).collect(),
        };
        Ok(self.push(Op::Square(a), value))
    }

    /// Sum of equally shaped nodes.
    pub fn sum(&mut self, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        let value = self.reduce("sum", inputs)?;
        Ok(self.push(Op::Sum(inputs.to_vec()), value))
    }

    /// Mean of equally shaped nodes (e.g. per-sample losses of a batch).
    pub fn mean(&mut self, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        let mut value = self.reduce("mean", inputs)?;
        let inv = 1.0 / inputs.len() as f64;
        value.data.iter_mut().for_each(|x| *x *= inv);
        Ok(self.push(Op::Mean(inputs.to_vec()), value))
    }

    fn reduce(&self, op: &'static str, inputs: &[NodeId]) -> Result<Tensor, GraphError> {
        let (&first, rest) = inputs.split_first().ok_or(GraphError::EmptyReduction {
            node: self.next_id(),
            op,
        })?;
        let mut acc = self.check(op, first)?.clone();
        for &id in rest {
            let v = self.check(op, id)?;
            if v.shape != acc.shape {
                return Err(self.mismatch(op, acc.shape, v.shape));
            }
            acc.data.iter_mut().zip(&v.data).for_each(|(a, x)| *a += x);
        }
        Ok(acc)
    }

    /// Contiguous sub-vector `a[start..start + len]`.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, GraphError> {
        let va = self.check("slice", a)?;
        let end = start + len;
        match va.shape {
            Shape::Vector(n) if end <= n => {
                let data = va.data[start..end].to_vec();
                Ok(self.push(Op::Slice { input: a, start }, Tensor::vector(data)))
            }
            shape => Err(GraphError::SliceOutOfRange {
                node: self.next_id(),
                op: "slice",
                start,
                end,
                shape,
            }),
        }
    }

    /// Entry `a[index]` as a scalar.
    pub fn element(&mut self, a: NodeId, index: usize) -> Result<NodeId, GraphError> {
        let va = self.check("element", a)?;
        match va.shape {
            Shape::Vector(n) if index < n => {
                let v = va.data[index];
                Ok(self.push(Op::Element { input: a, index }, Tensor::scalar(v)))
            }
            shape => Err(GraphError::SliceOutOfRange {
                node: self.next_id(),
                op: "element",
                start: index,
                end: index + 1,
                shape,
            }),
        }
    }

    /// Stop-gradient: forwards the value, blocks adjoints.
    pub fn detach(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let value = self.check("detach", a)?.clone();
        Ok(self.push(Op::Detach, value))
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GraphError> {
        let shape = self
            .nodes
            .get(loss.0)
            .ok_or(GraphError::UnknownNode {
                node: loss.0,
                op: "backward",
                input: loss.0,
            })?
            .value
            .shape;
        if shape != Shape::Scalar {
            return Err(GraphError::NonScalarLoss {
                node: loss.0,
                shape,
            });
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape).collect(),
            adjoints: adj,
        })
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Leaf | Op::Detach => {}
            Op::Add(a, b) => {
                accumulate(adj, self, *a, g.iter().copied());
                accumulate(adj, self, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                accumulate(adj, self, *a, g.iter().copied());
                accumulate(adj, self, *b, g.iter().map(|x| -x));
            }
            Op::Scale(a, k) => accumulate(adj, self, *a, g.iter().map(|x| k * x)),
            Op::ScalarMul(s, a) => {
                let va = &self.nodes[a.0].value.data;
                let k = self.nodes[s.0].value.data[0];
                let ds: f64 = g.iter().zip(va).map(|(x, y)| x * y).sum();
                accumulate(adj, self, *s, std::iter::once(ds));
                accumulate(adj, self, *a, g.iter().map(|x| k * x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
                accumulate(adj, self, *a, g.iter().zip(vb).map(|(x, y)| x * y));
                accumulate(adj, self, *b, g.iter().zip(va).map(|(x, y)| x * y));
            }
            Op::MatVec(w, x) => self.matvec_backward(*w, *x, g, adj),
            Op::Affine { w, x, b } => {
                self.matvec_backward(*w, *x, g, adj);
                accumulate(adj, self, *b, g.iter().copied());
            }
            Op::Dot(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
                let k = g[0];
                accumulate(adj, self, *a, vb.iter().map(|y| k * y));
                accumulate(adj, self, *b, va.iter().map(|y| k * y));
            }
            Op::Tanh(a) => {
                let y = &node.value.data;
                accumulate(adj, self, *a, g.iter().zip(y).map(|(x, t)| x * (1.0 - t * t)));
            }
            Op::Square(a) => {
                let va = &self.nodes[a.0].value.data;
                accumulate(adj, self, *a, g.iter().zip(va).map(|(x, y)| 2.0 * x * y));
            }
            Op::Sum(inputs) => {
                for id in inputs {
                    accumulate(adj, self, *id, g.iter().copied());
                }
            }
            Op::Mean(inputs) => {
                let inv = 1.0 / inputs.len() as f64;
                for id in inputs {
                    accumulate(adj, self, *id, g.iter().map(|x| x * inv));
                }
            }
            Op::Slice { input, start }
            | Op::Element {
                input,
                index: start,
            } => {
                if !self.receives_gradient(*input) {
                    return;
                }
                let n = self.nodes[input.0].value.data.len();
                let slot = adj[input.0].get_or_insert_with(|| vec![0.0; n]);
                slot[*start..*start + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, x)| *a += x);
            }
        }
    }

    fn matvec_backward(&self, w: NodeId, x: NodeId, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value.data;
        let Shape::Matrix(rows, cols) = wv.shape else {
            unreachable!("matvec operand checked at build time")
        };
        if self.receives_gradient(w) {
            let slot = adj[w.0].get_or_insert_with(|| vec![0.0; rows * cols]);
            for (row, gr) in slot.chunks_exact_mut(cols).zip(g) {
                row.iter_mut().zip(xv).for_each(|(a, xj)| *a += gr * xj);
            }
        }
        if self.receives_gradient(x) {
            let slot = adj[x.0].get_or_insert_with(|| vec![0.0; cols]);
            for (row, gr) in wv.data.chunks_exact(cols).zip(g) {
                slot.iter_mut().zip(row).for_each(|(a, wij)| *a += gr * wij);
            }
        }
    }

    fn receives_gradient(&self, id: NodeId) -> bool {
        !matches!(self.nodes[id.0].op, Op::Constant)
    }
}

fn accumulate(
    adj: &mut [Option<Vec<f64>>],
    graph: &Graph,
    target: NodeId,
    contrib: impl Iterator<Item = f64>,
) {
    if !graph.receives_gradient(target) {
        return;
    }
    match &mut adj[target.0] {
        Some(slot) => slot.iter_mut().zip(contrib).for_each(|(a, x)| *a += x),
        empty @ None => *empty = Some(contrib.collect()),
    }
}

fn matvec_into(w: &Tensor, x: &Tensor, bias: Option<&[f64]>) -> Vec<f64> {
    let Shape::Matrix(rows, cols) = w.shape else {
        unreachable!("matvec operand checked at build time")
    };
    (0..rows)
        .map(|r| {
            let row = &w.data[r * cols..(r + 1) * cols];
            let acc: f64 = row.iter().zip(&x.data).map(|(a, b)| a * b).sum();
            acc + bias.map_or(0.0, |b| b[r])
        })
        .collect()
}

/// Adjoints from one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    shapes: Vec<Shape>,
    adjoints: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// ∂loss/∂node; zero for nodes the loss does not reach.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        let shape = self.shapes[id.0];
        match &self.adjoints[id.0] {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(shape),
        }
    }

    /// Whether any adjoint reached `id`.
    pub fn reached(&self, id: NodeId) -> bool {
        self.adjoints[id.0].is_some()
    }
}
